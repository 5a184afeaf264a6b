//! Turn-by-turn tracking against a loaded model, as used by the REPL.

use serde::{Deserialize, Serialize};

use crate::model::{AnyModel, TurnOutput};
use crate::tokenizer::Utterance;
use crate::tracker::{apply_turn, DialogueState};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub turn: usize,
    pub output: TurnOutput,
    pub state: DialogueState,
}

/// Dialogue history plus the accumulated state. The model is passed per call
/// so one model can serve many sessions.
#[derive(Debug, Clone, Default)]
pub struct TrackingSession {
    history: Vec<Utterance>,
    state: DialogueState,
    turns: usize,
}

impl TrackingSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &DialogueState {
        &self.state
    }

    pub fn history(&self) -> &[Utterance] {
        &self.history
    }

    pub fn turns(&self) -> usize {
        self.turns
    }

    /// Tracks one exchange: the system utterance that preceded the user line,
    /// then the user line itself. On error the session is left unchanged.
    pub fn turn(&mut self, model: &AnyModel, system: &str, user: &str) -> Result<SessionTurn> {
        let mut history = self.history.clone();
        if !system.trim().is_empty() {
            history.push(Utterance::system(system));
        }
        let output = model.predict(&history, user)?;
        let mut state = self.state.clone();
        apply_turn(&mut state, &output.prediction, model.schema())?;
        history.push(Utterance::user(user));
        self.history = history;
        self.state = state;
        self.turns += 1;
        Ok(SessionTurn {
            turn: self.turns,
            output,
            state: self.state.clone(),
        })
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}
