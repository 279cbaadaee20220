//! Mixing-topology analysis: does information from every input dimension
//! reach every output dimension?
//!
//! A [`MixingSchedule`] is a stack of stages; each stage is a list of mixer
//! units, and a unit connects each of its input dims to each of its output
//! dims. Butterfly plans, strided attention stacks, and patch schedules all
//! lower to this one declarative form, which [`check_complete_mixing`]
//! analyzes with bitset reachability. [`jacobian_density`] is the numeric
//! counterpart: finite differences through a live model, thresholded and
//! compared against the structural answer.

use crate::butterfly::{strided_units, ButterflySchedule};
use crate::error::{Error, Result};
use crate::patch_mixer::PatchSchedule;
use crate::rng::DetRng;
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;

/// One mixer in one stage: reads `inputs`, writes `outputs`, all-to-all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixerUnit {
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

impl MixerUnit {
    /// The common case of a unit that mixes a set of dims in place.
    pub fn symmetric(dims: Vec<usize>) -> Self {
        Self { inputs: dims.clone(), outputs: dims }
    }
}

/// A stack of mixing stages over `width` dims. Dims not written by any unit
/// of a stage pass through unchanged, which matches how every model here
/// treats untouched dims; dims written by a unit receive exactly the union
/// of their writers' inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixingSchedule {
    width: usize,
    stages: Vec<Vec<MixerUnit>>,
}

impl MixingSchedule {
    pub fn new(width: usize, stages: Vec<Vec<MixerUnit>>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Schedule("mixing width must be positive".into()));
        }
        for (si, stage) in stages.iter().enumerate() {
            for unit in stage {
                if unit.inputs.is_empty() || unit.outputs.is_empty() {
                    return Err(Error::Schedule(format!("stage {si} has an empty mixer unit")));
                }
                if let Some(&d) = unit.inputs.iter().chain(&unit.outputs).find(|&&d| d >= width) {
                    return Err(Error::Schedule(format!(
                        "stage {si} references dim {d}, width is {width}"
                    )));
                }
            }
        }
        Ok(Self { width, stages })
    }

    /// One stage mixing all dims at once.
    pub fn single_dense(width: usize) -> Self {
        let all = MixerUnit::symmetric((0..width).collect());
        Self { width, stages: vec![vec![all]] }
    }

    /// Lower a butterfly plan: one stage per layer, each block a unit.
    pub fn from_butterfly(plan: &ButterflySchedule) -> Self {
        let stages = (0..plan.layers())
            .map(|l| plan.units(l).into_iter().map(MixerUnit::symmetric).collect())
            .collect();
        Self { width: plan.n(), stages }
    }

    /// Lower a stack of strided attention layers over `seq` tokens. Each
    /// stage is a `(block, stride)` pair: groups of `block` tokens spaced
    /// `stride` apart attend to each other.
    pub fn from_attention(seq: usize, stages: &[(usize, usize)]) -> Result<Self> {
        let lowered = stages
            .iter()
            .map(|&(block, stride)| {
                Ok(strided_units(seq, block, stride)?
                    .into_iter()
                    .map(MixerUnit::symmetric)
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { width: seq, stages: lowered })
    }

    /// Lower `depth` layers of a patch schedule to spatial mixing over the
    /// `side * side` pixel grid: each patch is one unit (channels ride along
    /// inside the patch vector and need no dims of their own).
    pub fn from_patches(schedule: &PatchSchedule, depth: usize) -> Self {
        let side = schedule.side();
        let mut stages = Vec::with_capacity(depth);
        for layer in 0..depth {
            let k = schedule.layer_patch(layer);
            let tiles = side / k;
            let mut units = Vec::with_capacity(tiles * tiles);
            for tr in 0..tiles {
                for tc in 0..tiles {
                    let mut dims = Vec::with_capacity(k * k);
                    for r in 0..k {
                        for c in 0..k {
                            dims.push((tr * k + r) * side + tc * k + c);
                        }
                    }
                    units.push(MixerUnit::symmetric(dims));
                }
            }
            stages.push(units);
        }
        Self { width: side * side, stages }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stages(&self) -> &[Vec<MixerUnit>] {
        &self.stages
    }
}

/// Fixed-width bitset rows used for reachability.
#[derive(Clone, PartialEq, Eq)]
struct BitRow {
    words: Vec<u64>,
}

impl BitRow {
    fn empty(width: usize) -> Self {
        Self { words: vec![0; width.div_ceil(64)] }
    }

    fn singleton(width: usize, i: usize) -> Self {
        let mut row = Self::empty(width);
        row.set(i);
        row
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn or_with(&mut self, other: &BitRow) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }
}

/// Layered reachability graph built from a schedule. `reach[j]` after
/// construction is the set of input dims with a mixing path to output `j`.
pub struct MixingGraph {
    schedule: MixingSchedule,
    reach: Vec<BitRow>,
}

/// Build the layered graph and propagate reachability through every stage.
pub fn build_mixing_graph(schedule: MixingSchedule) -> MixingGraph {
    let width = schedule.width();
    let mut reach: Vec<BitRow> = (0..width).map(|j| BitRow::singleton(width, j)).collect();
    for stage in schedule.stages() {
        let mut next: Vec<Option<BitRow>> = vec![None; width];
        for unit in stage {
            let mut merged = BitRow::empty(width);
            for &i in &unit.inputs {
                merged.or_with(&reach[i]);
            }
            for &o in &unit.outputs {
                match &mut next[o] {
                    Some(row) => row.or_with(&merged),
                    slot => *slot = Some(merged.clone()),
                }
            }
        }
        for (j, slot) in next.into_iter().enumerate() {
            if let Some(row) = slot {
                reach[j] = row;
            }
        }
    }
    MixingGraph { schedule, reach }
}

impl MixingGraph {
    pub fn width(&self) -> usize {
        self.schedule.width()
    }

    pub fn num_stages(&self) -> usize {
        self.schedule.stages().len()
    }

    pub fn schedule(&self) -> &MixingSchedule {
        &self.schedule
    }

    /// Whether input `i` reaches output `j`.
    pub fn reaches(&self, i: usize, j: usize) -> bool {
        self.reach[j].get(i)
    }
}

/// Verdict of [`check_complete_mixing`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixingReport {
    pub complete: bool,
    /// Up to ten `(input, output)` pairs with no mixing path, in
    /// lexicographic order. Empty iff complete.
    pub missing_pairs: Vec<(usize, usize)>,
    /// For each input dim, how many output dims it reaches.
    pub per_input_reach_counts: Vec<usize>,
}

const MISSING_PAIR_WITNESSES: usize = 10;

/// Full-reachability check: complete mixing means every input dim has a
/// path to every output dim.
pub fn check_complete_mixing(graph: &MixingGraph) -> MixingReport {
    let width = graph.width();
    let mut counts = vec![0usize; width];
    let mut missing = Vec::new();
    for j in 0..width {
        for i in 0..width {
            if graph.reach[j].get(i) {
                counts[i] += 1;
            } else if missing.len() < MISSING_PAIR_WITNESSES {
                missing.push((i, j));
            }
        }
    }
    missing.sort_unstable();
    MixingReport {
        complete: counts.iter().all(|&c| c == width),
        missing_pairs: missing,
        per_input_reach_counts: counts,
    }
}

const DENSITY_THRESHOLD: f64 = 1e-10;

/// Numeric support of the Jacobian of `f` on `[n] -> [m]`, sampled at
/// `trials` random base points with central differences. Entry `j * n + i`
/// is true when `|dy_j / dx_i|` exceeds `1e-10` at any base point.
pub fn jacobian_support(
    f: &dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    n: usize,
    trials: usize,
    rng: &mut DetRng,
) -> Result<Vec<bool>> {
    let h = 1e-5;
    let mut support: Option<Vec<bool>> = None;
    for _ in 0..trials.max(1) {
        let base: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = Tensor::from_vec(&[n], base.clone())?;
        let m = f(&x)?.len();
        let sup = support.get_or_insert_with(|| vec![false; m * n]);
        for i in 0..n {
            let mut bumped = base.clone();
            bumped[i] = base[i] + h;
            let up = f(&Tensor::from_vec(&[n], bumped.clone())?)?.value();
            bumped[i] = base[i] - h;
            let down = f(&Tensor::from_vec(&[n], bumped)?)?.value();
            if up.len() != m || down.len() != m {
                return Err(Error::Schedule("probe function changed output size".into()));
            }
            for j in 0..m {
                let d = (up[j] - down[j]) / (2.0 * h);
                if !d.is_finite() {
                    return Err(Error::NonFinite("jacobian probe"));
                }
                if d.abs() > DENSITY_THRESHOLD {
                    sup[j * n + i] = true;
                }
            }
        }
    }
    Ok(support.unwrap_or_default())
}

/// Fraction of `(input, output)` pairs with a numerically nonzero
/// derivative; 1.0 means the model mixes completely at the probed points.
pub fn jacobian_density(
    f: &dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    n: usize,
    trials: usize,
    rng: &mut DetRng,
) -> Result<f64> {
    let support = jacobian_support(f, n, trials, rng)?;
    if support.is_empty() {
        return Ok(0.0);
    }
    let hits = support.iter().filter(|&&b| b).count();
    Ok(hits as f64 / support.len() as f64)
}

/// Parameter count of one named part of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleCost {
    pub name: String,
    pub params: usize,
}

/// Cost summary for one forward pass: exact parameter count, measured MAC
/// counters, and data-movement passes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub params: usize,
    pub macs: u64,
    pub score_macs: u64,
    pub permutations: u64,
    pub modules: Vec<ModuleCost>,
}

/// Anything whose parameters and permutation passes can be audited.
pub trait CostAccounted {
    fn param_count(&self) -> usize;

    fn permutation_count(&self) -> u64 {
        0
    }

    fn module_costs(&self) -> Vec<ModuleCost> {
        Vec::new()
    }
}

/// Run `forward` under the MAC counters and combine the measurements with
/// the model's own bookkeeping. Permutations are counted as the increase
/// over the model's count before the call.
pub fn cost_report<M: CostAccounted, R>(
    model: &M,
    forward: impl FnOnce() -> Result<R>,
) -> Result<CostReport> {
    let before = model.permutation_count();
    let (out, macs, score_macs) = crate::counters::measure(forward);
    out?;
    Ok(CostReport {
        params: model.param_count(),
        macs,
        score_macs,
        permutations: model.permutation_count() - before,
        modules: model.module_costs(),
    })
}
