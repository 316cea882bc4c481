/// A collection of named, flat parameter (or gradient) blocks.
///
/// Blocks are visited in a fixed order; two values of the same shape visit
/// their blocks in the same order with the same names.
pub trait ParamSet {
    fn visit_blocks(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_blocks_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    /// `(name, len)` for every block.
    fn block_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit_blocks(&mut |name, b| out.push((name.to_string(), b.len())));
        out
    }

    fn to_blocks(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        self.visit_blocks(&mut |_, b| out.push(b.to_vec()));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_blocks(&mut |_, b| ok &= b.iter().all(|v| v.is_finite()));
        ok
    }
}

impl ParamSet for Vec<f64> {
    fn visit_blocks(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("params", self);
    }

    fn visit_blocks_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("params", self);
    }
}
