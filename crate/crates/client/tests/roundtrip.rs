use tcdst_client::{Client, ClientError};
use tcdst_core::api::{
    AnalyzeRequest, EvalRequest, GenerateRequest, OpenSessionRequest, SchemaSource, TurnRequest,
};
use tcdst_core::encoder::EncoderConfig;
use tcdst_core::tokenizer::Variant;
use tcdst_core::train::{GradCheckConfig, RunConfig};

async fn client() -> Client {
    let server = tcdst_server::start("127.0.0.1:0").await.unwrap();
    Client::new(server.url())
}

fn generate_req(dialogues: usize, rho: f64, out: Option<std::path::PathBuf>) -> GenerateRequest {
    GenerateRequest {
        schema: SchemaSource::parse("toy"),
        dialogues,
        rho,
        seed: 5,
        out,
        generator: None,
    }
}

#[tokio::test]
async fn health_and_corpus_routes() {
    let c = client().await;
    assert_eq!(c.health().await.unwrap().status, "ok");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let resp = c
        .generate(&generate_req(30, 1.0, Some(path.clone())))
        .await
        .unwrap();
    assert_eq!(resp.dialogues, 30);
    assert!(resp.corpus.is_none());

    let report = c.analyze(&AnalyzeRequest { corpus: path }).await.unwrap();
    assert_eq!(report.dialogues, 30);
    assert_eq!(report.turns, resp.turns);
    assert_eq!(report.cramers_v, resp.cramers_v);
}

#[tokio::test]
async fn errors_are_classified() {
    let c = client().await;
    let err = c.generate(&generate_req(1, -0.1, None)).await.unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert_eq!(err.status(), Some(422));

    let err = c
        .analyze(&AnalyzeRequest {
            corpus: "/nonexistent/corpus.json".into(),
        })
        .await
        .unwrap_err();
    assert!(!err.is_validation());
    assert_eq!(err.status(), Some(500));

    let err = c.session("missing").await.unwrap_err();
    assert_eq!(err.status(), Some(404));
    assert!(!err.is_validation());

    let dead = Client::new("http://127.0.0.1:1");
    assert!(matches!(
        dead.health().await,
        Err(ClientError::Transport(_))
    ));
}

#[tokio::test]
async fn gradcheck_route() {
    let c = client().await;
    let config = GradCheckConfig {
        hidden_size: 8,
        ffn_size: 16,
        num_layers: 1,
        num_heads: 2,
        max_coords_per_param: Some(4),
        ..Default::default()
    };
    let report = c.gradcheck(&config).await.unwrap();
    assert!(report.passed);
}

#[tokio::test]
async fn train_eval_session() {
    let c = client().await;
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("train.json");
    c.generate(&generate_req(4, 1.0, Some(corpus.clone())))
        .await
        .unwrap();

    let config = RunConfig {
        variant: Variant::BdstC,
        epochs: 1,
        batch_size: 16,
        encoder: EncoderConfig {
            num_layers: 1,
            hidden_size: 16,
            num_heads: 2,
            ffn_size: 32,
            ..Default::default()
        },
        train_corpus: corpus.clone(),
        checkpoint: dir.path().join("m.ckpt"),
        ..Default::default()
    };
    let summary = c.train(&config).await.unwrap();
    assert_eq!(summary.variant, Variant::BdstC);

    let report = c
        .eval(&EvalRequest {
            checkpoint: summary.checkpoint.clone(),
            corpus,
            oracle: false,
        })
        .await
        .unwrap();
    assert_eq!(report, summary.best);

    let info = c
        .open_session(&OpenSessionRequest {
            checkpoint: summary.checkpoint,
        })
        .await
        .unwrap();
    let turn = c
        .turn(
            &info.id,
            &TurnRequest {
                system: "how can i help".into(),
                user: "a cheap hotel please".into(),
            },
        )
        .await
        .unwrap();
    assert_eq!(turn.turn, 1);
    assert!(turn.output.intent.is_none());
    assert_eq!(turn.output.categorical.len(), 2);
    assert_eq!(c.session(&info.id).await.unwrap().state, turn.state);
    assert!(c.reset(&info.id).await.unwrap().state.0.is_empty());
    c.close_session(&info.id).await.unwrap();
    assert_eq!(c.session(&info.id).await.unwrap_err().status(), Some(404));
}
