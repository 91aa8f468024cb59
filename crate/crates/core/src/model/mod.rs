//! The neural editor: a gated graph network over the current tree, an LSTM
//! over the tree history, three decoder heads (operator, node, value) and
//! the edit encoder that turns a gold script into the vector `f_delta`.

mod editor;
mod io;
mod prep;
mod rollout;
mod vocab;

pub use editor::{Dropout, Editor, LossParts, Sample};
pub use io::{load_editor, save_editor, CheckpointMeta, ModelIoError};
pub use prep::{Episode, MemoryInfo, PrepError, StepTree, Target, ValueTarget};
pub use rollout::{Rollout, RolloutResult};
pub use vocab::Vocab;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorConfig {
    pub node_dim: usize,
    /// Per-direction width of the surrounding-context sequence encoder. Kept
    /// for checkpoint compatibility; no context encoder is built.
    pub seq_enc_dim: usize,
    pub history_dim: usize,
    pub op_emb_dim: usize,
    pub field_emb_dim: usize,
    pub rule_emb_dim: usize,
    pub value_hidden_dim: usize,
    pub edit_repr_dim: usize,
    pub action_repr_dim: usize,
    pub edit_enc_lstm_dim: usize,
    pub ggnn_steps: usize,
    pub max_edit_len: usize,
}

impl Default for EditorConfig {
    fn default() -> Self {
        EditorConfig {
            node_dim: 128,
            seq_enc_dim: 64,
            history_dim: 256,
            op_emb_dim: 32,
            field_emb_dim: 32,
            rule_emb_dim: 128,
            value_hidden_dim: 256,
            edit_repr_dim: 512,
            action_repr_dim: 256,
            edit_enc_lstm_dim: 256,
            ggnn_steps: 4,
            max_edit_len: 70,
        }
    }
}

impl EditorConfig {
    pub fn validate(&self) -> Result<(), String> {
        let dims = [
            ("node_dim", self.node_dim),
            ("seq_enc_dim", self.seq_enc_dim),
            ("history_dim", self.history_dim),
            ("op_emb_dim", self.op_emb_dim),
            ("field_emb_dim", self.field_emb_dim),
            ("rule_emb_dim", self.rule_emb_dim),
            ("value_hidden_dim", self.value_hidden_dim),
            ("edit_repr_dim", self.edit_repr_dim),
            ("action_repr_dim", self.action_repr_dim),
            ("edit_enc_lstm_dim", self.edit_enc_lstm_dim),
            ("max_edit_len", self.max_edit_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if self.edit_repr_dim != 2 * self.edit_enc_lstm_dim {
            return Err(format!(
                "edit_repr_dim ({}) must be twice edit_enc_lstm_dim ({})",
                self.edit_repr_dim, self.edit_enc_lstm_dim
            ));
        }
        // Rule embeddings are both GGNN inputs and value candidates.
        if self.rule_emb_dim != self.node_dim {
            return Err(format!("rule_emb_dim ({}) must equal node_dim ({})", self.rule_emb_dim, self.node_dim));
        }
        Ok(())
    }

    /// Small widths for fast tests.
    pub fn tiny() -> Self {
        EditorConfig {
            node_dim: 8,
            seq_enc_dim: 4,
            history_dim: 8,
            op_emb_dim: 4,
            field_emb_dim: 4,
            rule_emb_dim: 8,
            value_hidden_dim: 8,
            edit_repr_dim: 8,
            action_repr_dim: 8,
            edit_enc_lstm_dim: 4,
            ggnn_steps: 2,
            max_edit_len: 70,
        }
    }
}

#[cfg(test)]
mod tests;
