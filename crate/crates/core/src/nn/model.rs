use rand::Rng;

use super::config::{layer_plan, Layer, ModelConfig};
use crate::autograd::{glorot_uniform, same_padding, Mode, NormStats, RunningStats, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

/// Instantiated encoder-decoder network.
#[derive(Clone, Debug, PartialEq)]
pub struct CdnnModel {
    config: ModelConfig,
    plan: Vec<Layer>,
    /// Four tensors (kernel, bias, gamma, beta) per conv/deconv unit in plan
    /// order, then the output kernel and bias.
    params: Vec<(String, Tensor)>,
    stats: Vec<RunningStats>,
}

/// Variables recorded by one forward pass.
#[derive(Debug)]
pub struct Forward {
    pub output: Var,
    /// Tape leaves for every trainable tensor, aligned with
    /// [`CdnnModel::params`].
    pub params: Vec<Var>,
}

enum StatsAccess<'a> {
    Train(&'a mut [RunningStats]),
    Eval(&'a [RunningStats]),
}

impl StatsAccess<'_> {
    fn get(&mut self, unit: usize) -> NormStats<'_> {
        match self {
            StatsAccess::Train(s) => NormStats::Train(&mut s[unit]),
            StatsAccess::Eval(s) => NormStats::Eval(&s[unit]),
        }
    }
}

fn unit_names(plan: &[Layer]) -> Vec<String> {
    let mut names = Vec::new();
    let mut last: Option<(bool, usize)> = None;
    let mut j = 0;
    for layer in plan {
        let (dec, level) = match *layer {
            Layer::Conv { level, .. } => (false, level),
            Layer::Deconv { level, .. } => (true, level),
            _ => continue,
        };
        if last == Some((dec, level)) {
            j += 1;
        } else {
            j = 0;
        }
        last = Some((dec, level));
        names.push(format!("{}{level}.{j}", if dec { "dec" } else { "enc" }));
    }
    names
}

impl CdnnModel {
    /// Builds a freshly initialized model: Glorot-uniform kernels, zero
    /// biases and shifts, unit scales.
    pub fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let plan = layer_plan(config);
        let names = unit_names(&plan);
        let mut params = Vec::new();
        let mut stats = Vec::new();
        let mut unit = 0;
        for layer in &plan {
            let (shape, fan_in, fan_out, out_ch) = match *layer {
                Layer::Conv { in_ch, out_ch, kernel, .. } => {
                    ([out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, out_ch * kernel * kernel, out_ch)
                }
                Layer::Deconv { in_ch, out_ch, kernel, .. } => {
                    ([in_ch, out_ch, kernel, kernel], in_ch * kernel * kernel, out_ch * kernel * kernel, out_ch)
                }
                Layer::Output { in_ch } => {
                    params.push(("out.kernel".to_string(), glorot_uniform(&[1, in_ch, 1, 1], in_ch, 1, rng)));
                    params.push(("out.bias".to_string(), Tensor::zeros(&[1])));
                    continue;
                }
                _ => continue,
            };
            let name = &names[unit];
            params.push((format!("{name}.kernel"), glorot_uniform(&shape, fan_in, fan_out, rng)));
            params.push((format!("{name}.bias"), Tensor::zeros(&[out_ch])));
            params.push((format!("{name}.gamma"), Tensor::ones(&[out_ch])));
            params.push((format!("{name}.beta"), Tensor::zeros(&[out_ch])));
            stats.push(RunningStats::new(out_ch));
            unit += 1;
        }
        Ok(Self { config: config.clone(), plan, params, stats })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layer_plan(&self) -> &[Layer] {
        &self.plan
    }

    /// Layer count under the conv/deconv/pool/upsample/output convention.
    pub fn layer_count(&self) -> usize {
        self.plan.iter().filter(|l| l.counts_as_layer()).count()
    }

    pub fn input_channels(&self) -> usize {
        self.config.input_channels
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub(crate) fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    pub(crate) fn unit_names(&self) -> Vec<String> {
        unit_names(&self.plan)
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn param_count(&self) -> usize {
        param_count(self.params.iter().map(|(_, t)| t))
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(shape_err!("model input must be NCHW, got {shape:?}"));
        };
        if c != self.config.input_channels {
            return Err(shape_err!(
                "model `{}` expects {} input channels, got {c}",
                self.config.name,
                self.config.input_channels
            ));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(shape_err!("input size {h}x{w} is not divisible by {m} (2^(levels-1))"));
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(
        plan: &[Layer],
        params: &[(String, Tensor)],
        mut stats: StatsAccess<'_>,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        let vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        let mut x = input;
        let mut unit = 0;
        for layer in plan {
            x = match *layer {
                Layer::Conv { kernel, .. } | Layer::Deconv { kernel, .. } => {
                    let p = &vars[4 * unit..4 * unit + 4];
                    let pad = same_padding(kernel)?;
                    let y = if matches!(layer, Layer::Conv { .. }) {
                        tape.conv2d(x, p[0], p[1], pad)?
                    } else {
                        tape.conv_transpose2d(x, p[0], p[1], pad)?
                    };
                    let y = tape.batchnorm2d(y, p[2], p[3], stats.get(unit))?;
                    unit += 1;
                    tape.relu(y)?
                }
                Layer::Pool => tape.maxpool2x(x)?,
                Layer::Upsample => tape.upsample_nearest2x(x)?,
                Layer::Dropout { p, .. } => tape.dropout(x, p, mode, rng)?,
                Layer::Output { .. } => {
                    let n = vars.len();
                    let y = tape.conv2d(x, vars[n - 2], vars[n - 1], 0)?;
                    tape.sigmoid(y)?
                }
            };
        }
        Ok(Forward { output: x, params: vars })
    }

    /// Train-mode forward: batch statistics, live dropout, running
    /// statistics updated.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, tape: &mut Tape, input: Var, rng: &mut R) -> Result<Forward> {
        self.check_input(tape.value(input).shape())?;
        Self::run(&self.plan, &self.params, StatsAccess::Train(&mut self.stats), tape, input, Mode::Train, rng)
    }

    /// Eval-mode forward: running statistics, dropout off.
    pub fn forward_eval(&self, tape: &mut Tape, input: Var) -> Result<Forward> {
        self.check_input(tape.value(input).shape())?;
        // Eval-mode dropout never draws.
        let mut no_rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        Self::run(&self.plan, &self.params, StatsAccess::Eval(&self.stats), tape, input, Mode::Eval, &mut no_rng)
    }

    /// Foreground probabilities `N×1×H×W` for an `N×C×H×W` batch.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone());
        let fwd = self.forward_eval(&mut tape, x)?;
        Ok(tape.take_value(fwd.output))
    }
}

/// Sum of element counts.
pub fn param_count<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> usize {
    tensors.into_iter().map(|t| t.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_of_single_unit() {
        let t = [Tensor::<f32>::zeros(&[1, 1, 1, 1]), Tensor::zeros(&[1]), Tensor::ones(&[1]), Tensor::zeros(&[1])];
        assert_eq!(param_count(&t), 4);
        assert_eq!(param_count(std::iter::empty()), 0);
    }

    #[test]
    fn forward_preserves_size() {
        let cfg = ModelConfig::reduced("t", 3, [4, 8], 3);
        let model = CdnnModel::build(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let y = model.predict(&Tensor::full(&[2, 3, 8, 6], 0.3)).unwrap();
        assert_eq!(y.shape(), &[2, 1, 8, 6]);
        assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn indivisible_input_rejected() {
        let cfg = ModelConfig::cdnn_i(3);
        let model = CdnnModel::build(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(model.predict(&Tensor::zeros(&[1, 3, 6, 8])).is_err());
        assert!(model.predict(&Tensor::zeros(&[1, 2, 8, 8])).is_err());
    }

    #[test]
    fn unit_names_are_unique() {
        let model = CdnnModel::build(&ModelConfig::cdnn_ii(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut names: Vec<&str> = model.params().iter().map(|(n, _)| n.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
