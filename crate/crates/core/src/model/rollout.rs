use super::editor::{DecodeState, StepChoice};
use super::prep::{MemoryInfo, StepTree};
use super::Editor;
use crate::edits::{apply_mut, AddValue, EditAction, EditError, EditScript, OpKind};
use crate::grammar::ProdId;
use crate::nn::{Scalar, Tensor};
use crate::tree::{NodeId, SubtreeMemory, Tree};

#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub script: EditScript,
    pub tree: Tree,
    pub stopped: bool,
    /// Adds whose node was deleted by the very next action.
    pub add_delete_loops: usize,
}

/// Step-wise greedy decoding from an initial tree under a fixed `f_delta`.
/// Each step is [`Rollout::predict`] then [`Rollout::execute`]; the executed
/// action may differ from the prediction, as imitation learning needs.
pub struct Rollout<'e, S: Scalar> {
    editor: &'e Editor<S>,
    memory: SubtreeMemory,
    info: MemoryInfo,
    f: Tensor<S>,
    state: DecodeState<S>,
    tree: Tree,
    states: Vec<Tree>,
    script: EditScript,
    pending: Option<StepChoice>,
    stopped: bool,
    last_add: Option<NodeId>,
    loops: usize,
}

impl<'e, S: Scalar> Rollout<'e, S> {
    pub fn new(editor: &'e Editor<S>, g1: &Tree, f: Tensor<S>) -> Self {
        let memory = SubtreeMemory::new(g1);
        let info = MemoryInfo::new(&memory);
        Rollout {
            editor,
            memory,
            info,
            f,
            state: editor.initial_state(),
            tree: g1.clone(),
            states: Vec::new(),
            script: Vec::new(),
            pending: None,
            stopped: false,
            last_add: None,
            loops: 0,
        }
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn memory(&self) -> &SubtreeMemory {
        &self.memory
    }

    pub fn memory_info(&self) -> &MemoryInfo {
        &self.info
    }

    /// Pre-action trees of the executed steps.
    pub fn states(&self) -> &[Tree] {
        &self.states
    }

    pub fn script(&self) -> &[EditAction] {
        &self.script
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    /// Stopped, or at the length cap.
    pub fn done(&self) -> bool {
        self.stopped || self.script.len() >= self.editor.config.max_edit_len
    }

    /// Advances the history over the current tree and returns the greedy
    /// action with its distributions.
    pub fn predict(&mut self) -> (EditAction, StepChoice) {
        assert!(self.pending.is_none(), "predict called twice without execute");
        let st = StepTree::new(&self.tree, &self.editor.vocab, &self.info);
        let choice = self.editor.greedy_step(&st, &self.info, &self.f, &mut self.state);
        let action = self.to_action(&st, &choice);
        self.pending = Some(choice.clone());
        (action, choice)
    }

    pub fn execute(&mut self, a: &EditAction) -> Result<(), EditError> {
        assert!(self.pending.take().is_some(), "execute without predict");
        let before = self.tree.clone();
        let new = apply_mut(&mut self.tree, &self.memory, a)?;
        if let (Some(added), EditAction::Delete(d)) = (self.last_add, a) {
            self.loops += usize::from(added == *d);
        }
        self.last_add = if matches!(a, EditAction::Add { .. }) { new } else { None };
        self.states.push(before);
        self.script.push(a.clone());
        self.stopped = matches!(a, EditAction::Stop);
        Ok(())
    }

    /// Greedy decoding until Stop or the length cap.
    pub fn run(mut self) -> RolloutResult {
        while !self.done() {
            let (a, _) = self.predict();
            self.execute(&a).expect("masked choices are legal");
        }
        self.finish()
    }

    pub fn finish(self) -> RolloutResult {
        RolloutResult { script: self.script, tree: self.tree, stopped: self.stopped, add_delete_loops: self.loops }
    }

    fn to_action(&self, st: &StepTree, c: &StepChoice) -> EditAction {
        let node = c.node.map(|r| st.nodes[r]);
        let prods = self.editor.vocab.prod_count();
        let stat = self.editor.static_candidates();
        match c.op {
            OpKind::Stop => EditAction::Stop,
            OpKind::Delete => EditAction::Delete(node.expect("node")),
            OpKind::Add | OpKind::Copy => {
                let anchor = node.expect("node");
                let col = c.value.expect("value");
                if col < prods {
                    EditAction::Add { anchor, value: AddValue::Rule(ProdId(col)) }
                } else if col < stat {
                    let (_, tok) = self.editor.vocab.token(col - prods).expect("masked columns exclude UNK");
                    EditAction::Add { anchor, value: AddValue::Token(tok.clone()) }
                } else {
                    EditAction::Copy { anchor, entry: col - stat }
                }
            }
        }
    }
}

impl<S: Scalar> Editor<S> {
    /// Greedy rollout from `g1` under `f`.
    pub fn rollout(&self, f: &Tensor<S>, g1: &Tree) -> RolloutResult {
        Rollout::new(self, g1, f.clone()).run()
    }
}
