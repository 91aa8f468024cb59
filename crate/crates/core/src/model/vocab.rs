use std::collections::HashMap;

use crate::grammar::{Grammar, ProdId, TerminalId};

/// Integer ids for tokens and fields. Token id 0 is UNK; productions use
/// their grammar ids; the root slot gets the last field id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<(TerminalId, String)>,
    token_index: HashMap<(TerminalId, String), usize>,
    by_kind: Vec<Vec<usize>>,
    fields: Vec<(ProdId, usize)>,
    field_index: HashMap<(ProdId, usize), usize>,
    prods: usize,
}

impl Vocab {
    pub fn new(g: &Grammar, tokens: &[(TerminalId, String)]) -> Vocab {
        let mut v = Vocab {
            tokens: Vec::new(),
            token_index: HashMap::new(),
            by_kind: vec![Vec::new(); g.terminal_kinds().len()],
            fields: g.all_fields(),
            field_index: HashMap::new(),
            prods: g.productions().len(),
        };
        for (kind, tok) in tokens {
            let key = (*kind, tok.clone());
            if v.token_index.contains_key(&key) {
                continue;
            }
            v.tokens.push(key.clone());
            let id = v.tokens.len();
            v.token_index.insert(key, id);
            v.by_kind[kind.0].push(id);
        }
        v.field_index = v.fields.iter().enumerate().map(|(i, &f)| (f, i)).collect();
        v
    }

    /// Token entries, UNK excluded, in id order starting at 1.
    pub fn tokens(&self) -> &[(TerminalId, String)] {
        &self.tokens
    }

    /// Rows of the token embedding table, UNK included.
    pub fn token_rows(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn token_id(&self, kind: TerminalId, tok: &str) -> usize {
        self.token_index.get(&(kind, tok.to_string())).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> Option<&(TerminalId, String)> {
        id.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn tokens_of_kind(&self, kind: TerminalId) -> &[usize] {
        &self.by_kind[kind.0]
    }

    pub fn prod_count(&self) -> usize {
        self.prods
    }

    pub fn fields(&self) -> &[(ProdId, usize)] {
        &self.fields
    }

    /// Rows of the field embedding table, root slot included.
    pub fn field_rows(&self) -> usize {
        self.fields.len() + 1
    }

    /// `None` is the root slot.
    pub fn field_id(&self, slot: Option<(ProdId, usize)>) -> usize {
        match slot {
            Some(f) => self.field_index[&f],
            None => self.fields.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_stable_and_unk_is_zero() {
        let g = Grammar::minilang();
        let id = g.find_terminal("ident").unwrap();
        let v = Vocab::new(&g, &[(id, "x".into()), (id, "y".into()), (id, "x".into())]);
        assert_eq!(v.token_rows(), 3);
        assert_eq!(v.token_id(id, "x"), 1);
        assert_eq!(v.token_id(id, "y"), 2);
        assert_eq!(v.token_id(id, "zz"), 0);
        assert_eq!(v.token(2), Some(&(id, "y".to_string())));
        assert_eq!(v.token(0), None);
        assert_eq!(v.tokens_of_kind(id), &[1, 2]);
        assert_eq!(v.field_id(None), v.fields().len());
    }
}
