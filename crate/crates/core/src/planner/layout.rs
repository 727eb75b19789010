use crate::model::num_pairs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    X = 0,
    Y = 1,
    Vx = 2,
    Vy = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxComponent {
    X = 0,
    Y = 1,
}

/// Flat indexing of the decision variables of one planning window.
///
/// Per-UAV blocks come first, `(uav, step)` major with the four components
/// `X, Y, Vx, Vy` innermost; the auxiliary pair variables of the literal
/// encoding follow, `(pair, step)` major. `step` counts planned slots from
/// 0, i.e. slot `start_slot + step + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub num_uavs: usize,
    pub num_steps: usize,
    pub with_aux: bool,
}

impl VariableLayout {
    pub fn new(num_uavs: usize, num_steps: usize, with_aux: bool) -> Self {
        Self { num_uavs, num_steps, with_aux }
    }

    pub fn num_pairs(&self) -> usize {
        num_pairs(self.num_uavs)
    }

    pub fn num_state_vars(&self) -> usize {
        4 * self.num_uavs * self.num_steps
    }

    pub fn num_vars(&self) -> usize {
        self.num_state_vars() + if self.with_aux { 2 * self.num_pairs() * self.num_steps } else { 0 }
    }

    pub fn var(&self, uav: usize, step: usize, c: Component) -> usize {
        debug_assert!(uav < self.num_uavs && step < self.num_steps);
        (uav * self.num_steps + step) * 4 + c as usize
    }

    pub fn aux(&self, pair: usize, step: usize, c: AuxComponent) -> usize {
        debug_assert!(self.with_aux && pair < self.num_pairs() && step < self.num_steps);
        self.num_state_vars() + (pair * self.num_steps + step) * 2 + c as usize
    }
}
