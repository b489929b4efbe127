//! Synthetic ground-truth graphs and forward sampling from the linear model.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Parameters, WeightedGraph};
use crate::layout::BlockLayout;
use crate::scalar::Scalar;

/// Named presets plus `Custom` for hand-built specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S3nx,
    S3mod,
    S4,
    S5,
    S6,
    Custom,
}

impl ScenarioId {
    pub const PRESETS: [ScenarioId; 8] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S3nx,
        ScenarioId::S3mod,
        ScenarioId::S4,
        ScenarioId::S5,
        ScenarioId::S6,
    ];
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::S3nx => "S3nx",
            ScenarioId::S3mod => "S3mod",
            ScenarioId::S4 => "S4",
            ScenarioId::S5 => "S5",
            ScenarioId::S6 => "S6",
            ScenarioId::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "s1" => ScenarioId::S1,
            "s2" => ScenarioId::S2,
            "s3" => ScenarioId::S3,
            "s3nx" => ScenarioId::S3nx,
            "s3mod" => ScenarioId::S3mod,
            "s4" => ScenarioId::S4,
            "s5" => ScenarioId::S5,
            "s6" => ScenarioId::S6,
            "custom" => ScenarioId::Custom,
            other => return Err(Error::Config(format!("unknown scenario preset {other:?}"))),
        })
    }
}

/// How the mediator-to-mediator block is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    /// Every permitted slot, including mediator pairs ordered by a random
    /// permutation, draws from the weight alphabet.
    ConstrainedRandom,
    /// Mediator pairs along a random order carry an edge with probability
    /// `min(1, 2d / (s - 1))`, i.e. expected in-degree `d`; weights are drawn
    /// from the nonzero part of the alphabet.
    ErDegree(f64),
}

/// Which mediator edges exist at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MediatorBlock {
    /// Mediators are isolated: only `X`, `A`, `XA` and `Y` carry weight.
    Absent,
    /// Mediators are reachable but never affect each other.
    Parallel,
    /// Mediators form a DAG drawn per [`GraphKind`].
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub p: usize,
    pub s: usize,
    pub n: usize,
    pub graph_kind: GraphKind,
    pub mediators: MediatorBlock,
    pub weight_alphabet: Vec<f64>,
    /// Redraw until some interaction coefficient is nonzero.
    pub require_interaction: bool,
    /// Force every interaction coefficient to zero.
    pub zero_interaction: bool,
    /// Force `delta_X = 0` so the covariates are independent of treatment.
    pub independent_treatment: bool,
    pub baseline: f64,
    pub center: bool,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn custom(p: usize, s: usize, n: usize, seed: u64) -> Self {
        Self {
            id: ScenarioId::Custom,
            p,
            s,
            n,
            graph_kind: GraphKind::ConstrainedRandom,
            mediators: MediatorBlock::Sequential,
            weight_alphabet: vec![-1.0, 0.0, 1.0],
            require_interaction: true,
            zero_interaction: false,
            independent_treatment: false,
            baseline: 1.0,
            center: true,
            seed,
        }
    }

    pub fn preset(id: ScenarioId, seed: u64) -> Result<Self> {
        let base = |p, s, n| ScenarioSpec { id, ..Self::custom(p, s, n, seed) };
        let spec = match id {
            ScenarioId::S1 => ScenarioSpec { mediators: MediatorBlock::Absent, ..base(2, 6, 500) },
            ScenarioId::S2 => ScenarioSpec { mediators: MediatorBlock::Parallel, ..base(2, 6, 500) },
            ScenarioId::S3 => ScenarioSpec { graph_kind: GraphKind::ErDegree(2.0), ..base(2, 6, 500) },
            ScenarioId::S3nx => ScenarioSpec {
                graph_kind: GraphKind::ErDegree(2.0),
                require_interaction: false,
                zero_interaction: true,
                ..base(2, 6, 500)
            },
            ScenarioId::S3mod => ScenarioSpec {
                graph_kind: GraphKind::ErDegree(2.0),
                independent_treatment: true,
                ..base(2, 6, 500)
            },
            ScenarioId::S4 => ScenarioSpec { graph_kind: GraphKind::ErDegree(4.0), ..base(2, 38, 1000) },
            ScenarioId::S5 => ScenarioSpec { graph_kind: GraphKind::ErDegree(4.0), ..base(18, 6, 1000) },
            ScenarioId::S6 => ScenarioSpec { graph_kind: GraphKind::ErDegree(4.0), ..base(22, 10, 1000) },
            ScenarioId::Custom => {
                return Err(Error::Config("custom scenarios have no preset; build the spec directly".into()))
            }
        };
        Ok(spec)
    }

    pub fn layout(&self) -> Result<BlockLayout> {
        BlockLayout::new(self.p, self.s)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        if self.weight_alphabet.is_empty() || self.weight_alphabet.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("weight alphabet must be non-empty and finite".into()));
        }
        let has_nonzero = self.weight_alphabet.iter().any(|&w| w != 0.0);
        if self.require_interaction && (!has_nonzero || self.zero_interaction) {
            return Err(Error::Config(
                "require_interaction needs a nonzero weight and interaction edges enabled".into(),
            ));
        }
        if self.require_interaction && self.mediators == MediatorBlock::Absent && self.p == 0 {
            return Err(Error::Config("no interaction slot available".into()));
        }
        if let GraphKind::ErDegree(d) = self.graph_kind {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Config("ER degree must be non-negative".into()));
            }
            if d > 0.0 && !has_nonzero {
                return Err(Error::Config("ER edges need a nonzero weight".into()));
            }
        }
        Ok(())
    }

    /// Deterministic RNG for this spec's seed.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Draws a structurally valid acyclic ground-truth graph.
pub fn gen_true_graph<T: Scalar, R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<WeightedGraph<T>> {
    spec.validate()?;
    const MAX_ATTEMPTS: usize = 100_000;
    for _ in 0..MAX_ATTEMPTS {
        let params = draw_parameters::<T, R>(spec, rng);
        let interacts = params.b_xa.iter().chain(params.gamma_xa.iter()).any(|v| *v != T::zero());
        if !spec.require_interaction || interacts {
            return params.to_graph();
        }
    }
    Err(Error::Config("could not draw a graph with a nonzero interaction".into()))
}

fn draw_parameters<T: Scalar, R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Parameters<T> {
    let (p, s) = (spec.p, spec.s);
    let alphabet = &spec.weight_alphabet;
    let nonzero: Vec<f64> = alphabet.iter().copied().filter(|&w| w != 0.0).collect();
    let draw = |rng: &mut R| T::of(alphabet[rng.random_range(0..alphabet.len())]);

    let mut params = Parameters::<T>::zeros(p, s);
    for k in 0..p {
        params.delta_x[k] = draw(rng);
    }
    for k in 0..p {
        params.gamma_x[k] = draw(rng);
    }
    params.gamma_a = draw(rng);
    for k in 0..p {
        params.gamma_xa[k] = draw(rng);
    }
    if spec.mediators != MediatorBlock::Absent {
        for i in 0..s {
            for k in 0..p {
                params.b_x[[k, i]] = draw(rng);
            }
            params.beta_a[i] = draw(rng);
            for k in 0..p {
                params.b_xa[[k, i]] = draw(rng);
            }
            params.gamma_m[i] = draw(rng);
        }
    }
    if spec.mediators == MediatorBlock::Sequential && s > 1 {
        let mut order: Vec<usize> = (0..s).collect();
        order.shuffle(rng);
        let edge_prob = match spec.graph_kind {
            GraphKind::ConstrainedRandom => None,
            GraphKind::ErDegree(d) => Some((2.0 * d / (s as f64 - 1.0)).min(1.0)),
        };
        for a in 0..s {
            for b in a + 1..s {
                let (from, to) = (order[a], order[b]);
                params.b_m[[from, to]] = match edge_prob {
                    None => draw(rng),
                    Some(prob) => {
                        if rng.random::<f64>() < prob {
                            T::of(nonzero[rng.random_range(0..nonzero.len())])
                        } else {
                            T::zero()
                        }
                    }
                };
            }
        }
    }
    if spec.zero_interaction {
        params.b_xa.fill(T::zero());
        params.gamma_xa.fill(T::zero());
    }
    if spec.independent_treatment {
        params.delta_x.fill(T::zero());
    }
    params
}

/// Forward-samples `n` rows with standard normal noise.
pub fn forward_sample<T: Scalar, R: Rng + ?Sized>(
    g: &WeightedGraph<T>,
    n: usize,
    baseline: T,
    center: bool,
    rng: &mut R,
) -> Result<Dataset<T>> {
    forward_sample_with(g, n, baseline, center, rng, |r| r.sample::<f64, _>(StandardNormal))
}

/// Forward-samples with a caller-supplied noise draw shared by every
/// non-deterministic node.
pub fn forward_sample_with<T: Scalar, R: Rng + ?Sized>(
    g: &WeightedGraph<T>,
    n: usize,
    baseline: T,
    center: bool,
    rng: &mut R,
    mut noise: impl FnMut(&mut R) -> f64,
) -> Result<Dataset<T>> {
    let params = Parameters::from_graph(g)?;
    let order = params.mediator_order()?;
    let layout = g.layout();
    let (p, s) = (layout.p(), layout.s());
    let mut values = Array2::<T>::zeros((n, layout.width()));
    let mut m = vec![T::zero(); s];
    for mut row in values.outer_iter_mut() {
        let x: Vec<T> = (0..p).map(|_| T::of(noise(rng))).collect();
        let mut a = T::of(noise(rng));
        for k in 0..p {
            a += params.delta_x[k] * x[k];
        }
        let xa: Vec<T> = x.iter().map(|&xk| xk * a).collect();
        let m_noise: Vec<T> = (0..s).map(|_| T::of(noise(rng))).collect();
        for &j in &order {
            let mut v = m_noise[j] + params.beta_a[j] * a;
            for k in 0..p {
                v += params.b_x[[k, j]] * x[k] + params.b_xa[[k, j]] * xa[k];
            }
            for i in 0..s {
                v += params.b_m[[i, j]] * m[i];
            }
            m[j] = v;
        }
        let mut y = T::of(noise(rng)) + params.gamma_a * a + baseline;
        for k in 0..p {
            y += params.gamma_x[k] * x[k] + params.gamma_xa[k] * xa[k];
        }
        for i in 0..s {
            y += params.gamma_m[i] * m[i];
        }
        for k in 0..p {
            row[layout.covariate(k)] = x[k];
            row[layout.interaction(k)] = xa[k];
        }
        row[layout.treatment()] = a;
        for i in 0..s {
            row[layout.mediator(i)] = m[i];
        }
        row[layout.outcome()] = y;
    }
    let ds = Dataset::from_raw(layout, values)?;
    Ok(if center { ds.centered() } else { ds })
}

/// Ground truth plus a dataset drawn from it, both from `spec.seed`.
pub fn simulate<T: Scalar>(spec: &ScenarioSpec) -> Result<(WeightedGraph<T>, Dataset<T>)> {
    let mut rng = spec.rng();
    let g = gen_true_graph::<T, _>(spec, &mut rng)?;
    let ds = forward_sample(&g, spec.n, T::of(spec.baseline), spec.center, &mut rng)?;
    Ok((g, ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check_dag;
    use ndarray::Axis;

    #[test]
    fn preset_dimensions() {
        let dims: Vec<(usize, usize, usize)> = ScenarioId::PRESETS
            .iter()
            .map(|&id| {
                let s = ScenarioSpec::preset(id, 1).unwrap();
                (s.p, s.s, s.layout().unwrap().width())
            })
            .collect();
        assert_eq!(dims[0], (2, 6, 12));
        assert_eq!(dims[5], (2, 38, 44));
        assert_eq!(dims[6].0, 18);
        assert_eq!(dims[7], (22, 10, 56));
        assert!(ScenarioSpec::preset(ScenarioId::Custom, 1).is_err());
        assert!("S9".parse::<ScenarioId>().is_err());
        assert_eq!("s3MOD".parse::<ScenarioId>().unwrap(), ScenarioId::S3mod);
    }

    #[test]
    fn presets_are_valid_dags() {
        for id in ScenarioId::PRESETS {
            for seed in 1..6 {
                let spec = ScenarioSpec::preset(id, seed).unwrap();
                let g: WeightedGraph<f64> = gen_true_graph(&spec, &mut spec.rng()).unwrap();
                assert_eq!(g.structural_report().h2, 0.0, "{id} seed {seed}");
                assert!(check_dag(&g, 0.0));
            }
        }
    }

    #[test]
    fn s1_has_isolated_mediators_and_an_interaction() {
        for seed in 1..20 {
            let spec = ScenarioSpec::preset(ScenarioId::S1, seed).unwrap();
            let g: WeightedGraph<f64> = gen_true_graph(&spec, &mut spec.rng()).unwrap();
            let params = Parameters::from_graph(&g).unwrap();
            assert!(params.beta_a.iter().chain(params.gamma_m.iter()).all(|&v| v == 0.0));
            assert!(params.gamma_xa.iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn s2_mediators_are_parallel() {
        let spec = ScenarioSpec::preset(ScenarioId::S2, 4).unwrap();
        let g: WeightedGraph<f64> = gen_true_graph(&spec, &mut spec.rng()).unwrap();
        assert!(Parameters::from_graph(&g).unwrap().b_m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn s3nx_and_s3mod_forced_blocks() {
        for seed in 1..10 {
            let spec = ScenarioSpec::preset(ScenarioId::S3nx, seed).unwrap();
            let g: WeightedGraph<f64> = gen_true_graph(&spec, &mut spec.rng()).unwrap();
            let params = Parameters::from_graph(&g).unwrap();
            assert_eq!(g.structural_report().h2, 0.0);
            assert!(params.is_homogeneous());

            let spec = ScenarioSpec::preset(ScenarioId::S3mod, seed).unwrap();
            let g: WeightedGraph<f64> = gen_true_graph(&spec, &mut spec.rng()).unwrap();
            let params = Parameters::from_graph(&g).unwrap();
            assert!(params.delta_x.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn interaction_without_nonzero_weight_is_an_error() {
        let mut spec = ScenarioSpec::custom(1, 2, 10, 0);
        spec.weight_alphabet = vec![0.0];
        assert!(gen_true_graph::<f64, _>(&spec, &mut spec.rng()).is_err());
    }

    #[test]
    fn er_mean_in_degree_matches_target() {
        let mut total = 0usize;
        let draws = 1000;
        for seed in 0..draws {
            let spec = ScenarioSpec::preset(ScenarioId::S3, seed).unwrap();
            let g: WeightedGraph<f64> = gen_true_graph(&spec, &mut spec.rng()).unwrap();
            let params = Parameters::from_graph(&g).unwrap();
            total += params.b_m.iter().filter(|&&v| v != 0.0).count();
        }
        let mean_in_degree = total as f64 / (draws as f64 * 6.0);
        assert!((1.5..=2.5).contains(&mean_in_degree), "{mean_in_degree}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = ScenarioSpec::preset(ScenarioId::S3, 7).unwrap();
        let (g1, d1) = simulate::<f64>(&spec).unwrap();
        let (g2, d2) = simulate::<f64>(&spec).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn product_identity_and_centering() {
        let spec = ScenarioSpec { center: false, ..ScenarioSpec::preset(ScenarioId::S3, 3).unwrap() };
        let (_, raw) = simulate::<f64>(&spec).unwrap();
        let l = raw.layout();
        let v = raw.values();
        for row in v.outer_iter() {
            for k in 0..l.p() {
                assert_eq!(row[l.interaction(k)], row[l.covariate(k)] * row[l.treatment()]);
            }
        }
        let centered = raw.clone().centered();
        for m in centered.values().mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 1e-10);
        }
    }

    #[test]
    fn cyclic_mediators_rejected() {
        let l = BlockLayout::new(1, 2).unwrap();
        let mut g = WeightedGraph::<f64>::zeros(l);
        g.set_weight(l.mediator(0), l.mediator(1), 1.0);
        g.set_weight(l.mediator(1), l.mediator(0), 1.0);
        let err = forward_sample(&g, 5, 0.0, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err.to_string(), "cyclic mediators");
    }
}
