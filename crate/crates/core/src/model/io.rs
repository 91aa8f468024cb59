//! Editor checkpoints: the named-tensor container with a JSON header that
//! carries the config, the grammar and every vocabulary in id order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Editor, EditorConfig, Vocab};
use crate::edits::OpKind;
use crate::grammar::{parse_grammar, Grammar, GrammarError};
use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::Scalar;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub config: EditorConfig,
    pub grammar: String,
    /// `(terminal kind, token)` for token ids 1.. (0 is UNK).
    pub tokens: Vec<(String, String)>,
    pub productions: Vec<String>,
    /// `Constructor.field` per field id; the root slot follows them.
    pub fields: Vec<String>,
    pub operators: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Container(#[from] CheckpointError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint grammar: {0}")]
    Grammar(#[from] GrammarError),
}

fn production_names(g: &Grammar) -> Vec<String> {
    g.productions().iter().map(|p| p.constructor.clone()).collect()
}

fn field_names(g: &Grammar) -> Vec<String> {
    g.all_fields()
        .into_iter()
        .map(|(p, i)| {
            let prod = g.production(p);
            format!("{}.{}", prod.constructor, prod.fields[i].name)
        })
        .collect()
}

fn operator_names() -> Vec<String> {
    OpKind::ALL.iter().map(|o| format!("{o:?}")).collect()
}

impl<S: Scalar> Editor<S> {
    pub fn meta(&self) -> CheckpointMeta {
        let g = &self.grammar;
        CheckpointMeta {
            config: self.config,
            grammar: g.to_text(),
            tokens: self.vocab.tokens().iter().map(|(k, t)| (g.terminal_name(*k).to_string(), t.clone())).collect(),
            productions: production_names(g),
            fields: field_names(g),
            operators: operator_names(),
        }
    }
}

pub fn save_editor<S: Scalar>(path: &Path, e: &Editor<S>) -> Result<(), ModelIoError> {
    let meta = serde_json::to_vec(&e.meta()).map_err(|err| ModelIoError::Header(err.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    checkpoint::write(&mut w, &meta, &e.store)?;
    w.flush()?;
    Ok(())
}

pub fn load_editor<S: Scalar>(path: &Path) -> Result<Editor<S>, ModelIoError> {
    let (meta, tensors) = checkpoint::read(&mut BufReader::new(File::open(path)?))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta).map_err(|e| ModelIoError::Header(e.to_string()))?;
    meta.config.validate().map_err(ModelIoError::Header)?;
    let g = Arc::new(parse_grammar(&meta.grammar)?);
    if meta.productions != production_names(&g) || meta.fields != field_names(&g) {
        return Err(ModelIoError::Header("production or field ids disagree with the grammar".into()));
    }
    if meta.operators != operator_names() {
        return Err(ModelIoError::Header("unknown operator set".into()));
    }
    let mut tokens = Vec::with_capacity(meta.tokens.len());
    for (kind, tok) in &meta.tokens {
        let k = g.find_terminal(kind).ok_or_else(|| ModelIoError::Header(format!("unknown terminal kind `{kind}`")))?;
        tokens.push((k, tok.clone()));
    }
    let vocab = Vocab::new(&g, &tokens);
    if vocab.tokens().len() != tokens.len() {
        return Err(ModelIoError::Header("duplicate tokens".into()));
    }
    let mut e: Editor<S> = Editor::skeleton(meta.config, g, vocab);
    checkpoint::load_into(&mut e.store, &tensors)?;
    Ok(e)
}
