//! Controllers: anything that picks the purchase rule for the coming slot
//! from the observer's belief and its own internal state.

use std::borrow::Cow;
use std::sync::Arc;

use crate::belief::{ActionRule, Belief, BeliefGrid};
use crate::model::Renewable;

/// A causal policy. The belief passed to [`Controller::rule`] is the
/// observer's exact posterior, which the meter can track because it is a
/// function of public history.
pub trait Controller {
    fn rule(&self, belief: &Belief) -> Cow<'_, ActionRule>;

    /// Advance internal state after the slot's purchase and renewable arrival.
    fn observe(&mut self, y: usize, e: Renewable);

    /// Summary of internal state used to merge nodes of the exact tree. Two
    /// controllers with equal keys must behave identically from now on.
    fn markov_key(&self) -> u64 {
        0
    }
}

/// The same rule in every slot.
#[derive(Clone, Debug)]
pub struct FixedRule(pub ActionRule);

impl Controller for FixedRule {
    fn rule(&self, _: &Belief) -> Cow<'_, ActionRule> {
        Cow::Borrowed(&self.0)
    }

    fn observe(&mut self, _: usize, _: Renewable) {}
}

/// Stationary grid policy: the rule stored at the lattice point nearest the belief.
#[derive(Clone, Debug)]
pub struct GridController {
    grid: Arc<BeliefGrid>,
    rules: Arc<Vec<ActionRule>>,
}

impl GridController {
    pub fn new(grid: Arc<BeliefGrid>, rules: Arc<Vec<ActionRule>>) -> GridController {
        assert_eq!(grid.len(), rules.len(), "one rule per grid point");
        GridController { grid, rules }
    }
}

impl Controller for GridController {
    fn rule(&self, belief: &Belief) -> Cow<'_, ActionRule> {
        Cow::Borrowed(&self.rules[self.grid.quantize(belief.probs())])
    }

    fn observe(&mut self, _: usize, _: Renewable) {}
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn rule(&self, belief: &Belief) -> Cow<'_, ActionRule> {
        (**self).rule(belief)
    }

    fn observe(&mut self, y: usize, e: Renewable) {
        (**self).observe(y, e)
    }

    fn markov_key(&self) -> u64 {
        (**self).markov_key()
    }
}
