//! The BP-Net 1D U-Net: ensemble averaging, contraction and expansion blocks
//! with inception-residual cores, and a denoising head.

mod blocks;
mod weights;

pub use blocks::{
    bind, bpnet_forward, bpnet_forward_batch, contraction_forward, denoising_forward, ensemble_forward,
    expansion_forward, ir_block_forward, network_forward, stem_forward, Bindings, BnState, Ctx, ForwardTrace,
};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, WeightFile, BPNW_MAGIC, BPNW_VERSION};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{RunningStats, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Number of contraction/expansion pairs.
    pub depth: usize,
    pub base_channels: usize,
    pub ensemble_channels: usize,
    pub ir_kernel_sizes: Vec<usize>,
    pub leaky_slope: f64,
    pub input_length: usize,
    pub padded_length: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            base_channels: 16,
            ensemble_channels: 8,
            ir_kernel_sizes: vec![3, 5, 7],
            leaky_slope: 0.01,
            input_length: 1250,
            padded_length: 1280,
        }
    }
}

impl NetworkConfig {
    /// Default widths with the given depth and base width; the padded length is
    /// the next multiple of `2^depth` at or above `input_length`.
    pub fn sized(depth: usize, base_channels: usize, input_length: usize) -> Self {
        let unit = 1usize << depth.min(20);
        Self {
            depth,
            base_channels,
            input_length,
            padded_length: input_length.div_ceil(unit) * unit,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.depth > 16 {
            return fail(format!("depth {} outside 1..=16", self.depth));
        }
        if self.ir_kernel_sizes.is_empty() {
            return fail("no inception kernel sizes".into());
        }
        if let Some(k) = self.ir_kernel_sizes.iter().find(|k| *k % 2 == 0) {
            return fail(format!("inception kernel {k} is even"));
        }
        if self.base_channels < self.ir_kernel_sizes.len() {
            return fail(format!(
                "base width {} cannot feed {} inception branches",
                self.base_channels,
                self.ir_kernel_sizes.len()
            ));
        }
        if self.ensemble_channels == 0 {
            return fail("ensemble width is zero".into());
        }
        if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
            return fail(format!("leaky slope {} outside [0, 1)", self.leaky_slope));
        }
        if self.input_length == 0 || self.padded_length < self.input_length {
            return fail(format!(
                "padded length {} below input length {}",
                self.padded_length, self.input_length
            ));
        }
        if !self.padded_length.is_multiple_of(1 << self.depth) {
            return fail(format!(
                "padded length {} not divisible by 2^{}",
                self.padded_length, self.depth
            ));
        }
        Ok(())
    }

    /// Zeros added before and after the input (the extra one goes right).
    pub fn padding(&self) -> (usize, usize) {
        let total = self.padded_length - self.input_length;
        (total / 2, total - total / 2)
    }

    /// Channel width at encoder stage `i` (0 is the stem output).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub fn stage_length(&self, i: usize) -> usize {
        self.padded_length >> i
    }

    pub(crate) fn to_pairs(&self) -> Vec<(String, String)> {
        let kernels: Vec<String> = self.ir_kernel_sizes.iter().map(usize::to_string).collect();
        vec![
            ("depth".into(), self.depth.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("ensemble_channels".into(), self.ensemble_channels.to_string()),
            ("ir_kernel_sizes".into(), kernels.join(",")),
            ("leaky_slope".into(), format!("{:?}", self.leaky_slope)),
            ("input_length".into(), self.input_length.to_string()),
            ("padded_length".into(), self.padded_length.to_string()),
        ]
    }

    pub(crate) fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
            map.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("config block lacks {key}")))
        }
        fn num<N: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<N> {
            get(map, key)?
                .parse()
                .map_err(|_| Error::Format(format!("config key {key} is not a number")))
        }
        let kernels = get(map, "ir_kernel_sizes")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::Format("config key ir_kernel_sizes malformed".into()))?;
        Ok(Self {
            depth: num(map, "depth")?,
            base_channels: num(map, "base_channels")?,
            ensemble_channels: num(map, "ensemble_channels")?,
            ir_kernel_sizes: kernels,
            leaky_slope: num(map, "leaky_slope")?,
            input_length: num(map, "input_length")?,
            padded_length: num(map, "padded_length")?,
        })
    }
}

/// Output widths of the inception branches; the first absorbs the remainder.
pub fn branch_shares(channels: usize, branches: usize) -> Vec<usize> {
    let base = channels / branches;
    let mut shares = vec![base; branches];
    shares[0] += channels % branches;
    shares
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub channels: usize,
    pub length: usize,
}

/// Skip link from an encoder stage into an expansion block (both 1-based for
/// blocks, stage 0 being the stem output).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Skip {
    pub expansion_block: usize,
    pub encoder_stage: usize,
}

/// Static description of the wiring implied by a [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub config: NetworkConfig,
    /// `encoder[0]` is the stem output; `encoder[i]` the output of contraction block `i`.
    pub encoder: Vec<StageShape>,
    /// `decoder[j - 1]` is the output of expansion block `j`.
    pub decoder: Vec<StageShape>,
    pub skips: Vec<Skip>,
}

impl Topology {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let d = config.depth;
        let shape = |i: usize| StageShape {
            channels: config.stage_channels(i),
            length: config.stage_length(i),
        };
        Ok(Self {
            config: config.clone(),
            encoder: (0..=d).map(shape).collect(),
            decoder: (1..=d).map(|j| shape(d - j)).collect(),
            skips: (1..=d)
                .map(|j| Skip {
                    expansion_block: j,
                    encoder_stage: d - j,
                })
                .collect(),
        })
    }

    pub fn skip_for(&self, expansion_block: usize) -> usize {
        self.skips[expansion_block - 1].encoder_stage
    }
}

/// Named parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub params: BTreeMap<String, Tensor<T>>,
    /// Keyed by the batch-norm prefix, e.g. `cb2.bn`.
    pub running: BTreeMap<String, RunningStats<T>>,
    /// Parameters tagged as the reusable encoder by self-supervised pretraining.
    pub encoder_tags: Vec<String>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Usage(format!("no parameter named {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Trainable scalar count (running statistics excluded).
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn encoder_names(&self) -> Vec<String> {
        self.names().filter(|n| is_encoder(n)).map(str::to_owned).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        ParameterSet {
            params: self.params.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
            running: self
                .running
                .iter()
                .map(|(k, r)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: conv(&r.mean),
                            var: conv(&r.var),
                        },
                    )
                })
                .collect(),
            encoder_tags: self.encoder_tags.clone(),
        }
    }
}

/// Ensemble, stem and contraction blocks form the encoder.
pub fn is_encoder(name: &str) -> bool {
    name.starts_with("ens.") || name.starts_with("stem.") || name.starts_with("cb")
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: Vec<(String, Vec<usize>, Vec<f64>)>,
    running: Vec<(String, usize)>,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, bias: bool) {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let w = (0..cout * cin * k)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.params.push((format!("{name}.weight"), vec![cout, cin, k], w));
        if bias {
            self.params.push((format!("{name}.bias"), vec![cout], vec![0.0; cout]));
        }
    }

    /// Transposed conv weights are `[Cin, Cout, K]`; fan-in counts the output side.
    fn conv_t(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        let bound = 1.0 / ((cout * k) as f64).sqrt();
        let w = (0..cin * cout * k)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.params.push((format!("{name}.weight"), vec![cin, cout, k], w));
        self.params.push((format!("{name}.bias"), vec![cout], vec![0.0; cout]));
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.params.push((format!("{name}.gamma"), vec![c], vec![1.0; c]));
        self.params.push((format!("{name}.beta"), vec![c], vec![0.0; c]));
        self.running.push((name.to_owned(), c));
    }

    fn ir(&mut self, name: &str, c: usize, kernels: &[usize]) {
        for (k, share) in kernels.iter().zip(branch_shares(c, kernels.len())) {
            self.conv(&format!("{name}.branch{k}"), share, c, *k, true);
        }
    }
}

/// Deterministic initialization: conv weights uniform in `±1/sqrt(fan_in)`,
/// biases zero, batch-norm scale one and shift zero.
pub fn build_bpnet<T: Scalar>(config: &NetworkConfig, seed: u64) -> Result<(Topology, ParameterSet<T>)> {
    let topo = Topology::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        rng: &mut rng,
        params: Vec::new(),
        running: Vec::new(),
    };
    let ks = &config.ir_kernel_sizes;
    b.conv("ens.conv", config.ensemble_channels, 1, 7, true);
    b.conv("ens.avg", 1, config.ensemble_channels, 1, true);
    b.conv("stem", config.base_channels, 1, 3, true);
    for i in 1..=config.depth {
        let c = config.stage_channels(i - 1);
        b.conv(&format!("cb{i}.conv"), 2 * c, c, 3, false);
        b.bn(&format!("cb{i}.bn"), 2 * c);
        b.conv(&format!("cb{i}.down"), 2 * c, 2 * c, 4, true);
        b.ir(&format!("cb{i}.ir"), 2 * c, ks);
    }
    for j in 1..=config.depth {
        let c = config.stage_channels(config.depth - j + 1);
        let h = c / 2;
        b.conv(&format!("eb{j}.conv"), h, c, 3, false);
        b.bn(&format!("eb{j}.bn"), h);
        b.conv_t(&format!("eb{j}.up"), h, h, 4);
        b.ir(&format!("eb{j}.ir"), h, ks);
        b.conv(&format!("eb{j}.merge"), h, 2 * h, 1, true);
    }
    let base = config.base_channels;
    b.conv("db.conv1", base, base, 3, true);
    b.conv("db.conv2", base, base, 3, true);
    b.conv("db.out", 1, base, 1, true);

    let mut params = BTreeMap::new();
    for (name, shape, data) in b.params {
        let t = Tensor::new(&shape, data.into_iter().map(T::lit).collect())?;
        if params.insert(name.clone(), t).is_some() {
            return Err(Error::Consistency(format!("duplicate parameter {name}")));
        }
    }
    let running = b.running.into_iter().map(|(n, c)| (n, RunningStats::new(c))).collect();
    Ok((
        topo,
        ParameterSet {
            params,
            running,
            encoder_tags: Vec::new(),
        },
    ))
}
