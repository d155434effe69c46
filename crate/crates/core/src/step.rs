/// Right-continuous step function that is zero before its first jump time.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    /// Builds a step function from strictly increasing `times` and the value
    /// taken from each time onwards.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len(), "times and values differ in length");
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]), "times must be strictly increasing");
        Self { times, values }
    }

    /// Cumulative sum of `jumps` placed at `times`.
    pub fn from_jumps(times: Vec<f64>, jumps: &[f64]) -> Self {
        let mut acc = 0.0;
        let values = jumps
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        Self::new(times, values)
    }

    pub fn empty() -> Self {
        Self { times: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Size of the jump at each jump time.
    pub fn jumps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&v| {
                let d = v - prev;
                prev = v;
                d
            })
            .collect()
    }

    /// Index of the last jump time `<= t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&s| s <= t);
        k.checked_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.index_at(t).map_or(0.0, |i| self.values[i])
    }

    /// Value just before `t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        k.checked_sub(1).map_or(0.0, |i| self.values[i])
    }

    pub fn eval_many(&self, ts: &[f64]) -> Vec<f64> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { times: self.times.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn last_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Sorted union of several jump grids.
pub fn merge_grids<'a, I>(grids: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut all: Vec<f64> = grids.into_iter().flat_map(|g| g.iter().copied()).collect();
    all.sort_by(|a, b| a.total_cmp(b));
    all.dedup();
    all
}
