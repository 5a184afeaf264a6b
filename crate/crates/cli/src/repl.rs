use std::io::{IsTerminal, Write};
use std::path::Path;

use tcdst_client::Client;
use tcdst_core::api::{OpenSessionRequest, TurnRequest};
use tokio::io::{AsyncBufReadExt, BufReader};

use crate::{render, CmdResult, Failure};

const HELP: &str = "\
Enter a system utterance, then a user utterance; a blank system line means none.
Commands: /reset clears the dialogue state, /help shows this text, /quit exits.";

#[derive(Clone, Copy, PartialEq)]
enum Expect {
    System,
    User,
}

fn prompt(interactive: bool, expect: Expect) {
    if interactive {
        print!(
            "{}",
            if expect == Expect::System {
                "system> "
            } else {
                "user> "
            }
        );
        let _ = std::io::stdout().flush();
    }
}

pub async fn run(client: &Client, checkpoint: &Path) -> CmdResult {
    let info = client
        .open_session(&OpenSessionRequest {
            checkpoint: checkpoint.to_path_buf(),
        })
        .await?;
    println!(
        "{} model, {} intents, {} slots",
        info.variant,
        info.schema.intents.len(),
        info.schema.slots.len()
    );
    let interactive = std::io::stdin().is_terminal();
    if interactive {
        println!("{HELP}");
    }
    let result = repl_loop(client, &info.id, interactive).await;
    let _ = client.close_session(&info.id).await;
    result
}

async fn repl_loop(client: &Client, id: &str, interactive: bool) -> CmdResult {
    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    let mut expect = Expect::System;
    let mut system = String::new();
    loop {
        prompt(interactive, expect);
        let Some(line) = lines.next_line().await? else {
            return Ok(());
        };
        let trimmed = line.trim();
        if trimmed.starts_with('/') {
            match trimmed {
                "/quit" => return Ok(()),
                "/reset" => {
                    let status = client.reset(id).await?;
                    expect = Expect::System;
                    println!("state: {}", render::state(&status.state));
                }
                "/help" => println!("{HELP}"),
                _ => println!("unknown command {trimmed:?}\n{HELP}"),
            }
            continue;
        }
        match expect {
            Expect::System => {
                system = line;
                expect = Expect::User;
            }
            Expect::User => {
                expect = Expect::System;
                let req = TurnRequest {
                    system: std::mem::take(&mut system),
                    user: line,
                };
                match client.turn(id, &req).await {
                    Ok(t) => print!("{}", render::turn(&t.output, &t.state)),
                    Err(e) if e.is_validation() => println!("rejected: {e}"),
                    Err(e) => return Err(Failure::from(e)),
                }
            }
        }
    }
}
