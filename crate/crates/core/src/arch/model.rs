use super::build_pyramid;
use super::config::{MacNetConfig, PYRAMID_LEVELS};
use super::layers::{AtrousBlock, Bottleneck, ConvUnit, LinearUnit};
use super::params::{ForwardCtx, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::top_k_indices;
use crate::ops::{softmax_forward, Conv2dSpec, Mode};
use crate::rng::{stream, Rng};
use crate::tensor::container::ContainerEntry;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
struct Layout {
    stem: ConvUnit,
    atrous: Vec<AtrousBlock>,
    adapters: Vec<ConvUnit>,
    stages: Vec<Vec<Bottleneck>>,
    fc1: LinearUnit,
    fc2: LinearUnit,
    classifier: LinearUnit,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    /// Stem output after fusion with atrous level 0.
    pub stem: Var,
    /// Stage outputs after fusion, stage 1 first.
    pub stages: [Var; 4],
    /// One handle per parameter, in store order.
    pub params: Vec<Var>,
}

/// Eval-mode output of [`MacNet::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    /// `[N, K]` softmax probabilities.
    pub probs: Tensor<T>,
    pub top_k: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct MacNet<T> {
    config: MacNetConfig,
    seed: u64,
    store: ParamStore<T>,
    layout: Layout,
    mode: Mode,
}

impl<T: Real> MacNet<T> {
    /// Builds the network with He-normal weights, zero biases and identity
    /// batch norm. Deterministic in `(config, seed)`.
    pub fn init(config: MacNetConfig, seed: u64) -> Result<Self> {
        config.fusion_plan()?;
        let mut rng = stream(&[seed, 0x1417]);
        let mut store = ParamStore::new();
        let bn = config.bn_enabled.then_some(config.bn_momentum);
        let rng = &mut rng;

        let stem = ConvUnit::new(&mut store, rng, "stem", Conv2dSpec::same(3, config.stem_channels, 3, 1), bn, true);
        let mut atrous = Vec::with_capacity(PYRAMID_LEVELS);
        let mut adapters = Vec::with_capacity(PYRAMID_LEVELS);
        for level in 0..PYRAMID_LEVELS {
            let block = AtrousBlock::new(
                &mut store,
                rng,
                &format!("atrous{level}"),
                3,
                config.atrous_branch_width,
                &config.atrous_rates,
                bn,
            );
            let adapter_spec = Conv2dSpec::pointwise(block.out_channels(), config.fusion_channels(level));
            adapters.push(ConvUnit::new(
                &mut store,
                rng,
                &format!("adapter{level}"),
                adapter_spec,
                None,
                false,
            ));
            atrous.push(block);
        }
        let mut stages = Vec::with_capacity(4);
        let mut cin = config.stem_channels;
        for (s, (&cout, &depth)) in config.stage_channels.iter().zip(&config.stage_depths).enumerate() {
            let blocks = (0..depth)
                .map(|b| {
                    let (input, stride) = if b == 0 { (cin, 2) } else { (cout, 1) };
                    Bottleneck::new(&mut store, rng, &format!("stage{}.block{b}", s + 1), input, cout, stride, bn)
                })
                .collect();
            stages.push(blocks);
            cin = cout;
        }
        let (f1, f2) = config.fc_widths;
        let fc1 = LinearUnit::new(&mut store, rng, "fc1", cin, f1);
        let fc2 = LinearUnit::new(&mut store, rng, "fc2", f1, f2);
        let classifier = LinearUnit::new(&mut store, rng, "classifier", f2, config.num_classes);

        let layout = Layout {
            stem,
            atrous,
            adapters,
            stages,
            fc1,
            fc2,
            classifier,
        };
        Ok(MacNet {
            config,
            seed,
            store,
            layout,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &MacNetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Zeroes the classifier weights and bias, giving uniform predictions.
    pub fn zero_classifier(&mut self) {
        for id in [self.layout.classifier.weight(), self.layout.classifier.bias()] {
            let p = self.store.param_mut(id);
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
    }

    /// Records the forward pass on `tape` using the current mode. In train
    /// mode batch norm updates its running moments and dropout draws from
    /// `rng`; in eval mode parameters still track gradients.
    pub fn forward(&mut self, tape: &mut Tape<T>, image: Var, rng: Option<&mut Rng>) -> Result<ForwardTrace> {
        self.check_parameters()?;
        let mut ctx = match self.mode {
            Mode::Train => ForwardCtx::train(tape, &mut self.store, rng),
            Mode::Eval => ForwardCtx::eval(tape, &self.store, true),
        };
        run(&self.layout, &self.config, &mut ctx, image)
    }

    /// Eval-semantics forward pass that leaves the model untouched,
    /// whatever its mode. No gradients are tracked.
    pub fn eval_logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_parameters()?;
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let mut ctx = ForwardCtx::eval(&mut tape, &self.store, false);
        let trace = run(&self.layout, &self.config, &mut ctx, x)?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Class probabilities and the `k` most probable classes per sample.
    pub fn predict(&self, images: &Tensor<T>, k: usize) -> Result<Prediction<T>> {
        if self.mode != Mode::Eval {
            return Err(Error::Mode(Mode::Train.as_str()));
        }
        let probs = softmax_forward(&self.eval_logits(images)?)?;
        let classes = self.config.num_classes;
        let top_k = probs.data().chunks_exact(classes).map(|row| top_k_indices(row, k)).collect();
        Ok(Prediction { probs, top_k })
    }

    fn check_parameters(&self) -> Result<()> {
        match self.store.params().iter().find(|p| !p.value.is_finite()) {
            Some(p) => Err(Error::NumericFault { layer: p.name.clone() }),
            None => Ok(()),
        }
    }

    /// Parameters as `param/<name>` and batch-norm moments as
    /// `buffer/<name>.running_mean` / `.running_var`.
    pub fn to_entries(&self) -> Vec<ContainerEntry> {
        let mut entries: Vec<ContainerEntry> = self
            .store
            .params()
            .iter()
            .map(|p| ContainerEntry::from_tensor(format!("param/{}", p.name), &p.value))
            .collect();
        for (name, m) in self.store.moments() {
            let c = m.channels();
            let mean = Tensor::new(vec![c], m.mean.clone()).expect("moment length");
            let var = Tensor::new(vec![c], m.var.clone()).expect("moment length");
            entries.push(ContainerEntry::from_tensor(format!("buffer/{name}.running_mean"), &mean));
            entries.push(ContainerEntry::from_tensor(format!("buffer/{name}.running_var"), &var));
        }
        entries
    }

    /// Restores values written by [`to_entries`](Self::to_entries). Every
    /// parameter and buffer must be present with matching extents; entries
    /// outside the `param/` and `buffer/` namespaces are ignored.
    pub fn load_entries(&mut self, entries: &[ContainerEntry]) -> Result<()> {
        let lookup = |key: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let entry = entries
                .iter()
                .find(|e| e.name == key)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry `{key}`")))?;
            if entry.tensor.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "`{key}` has extents {:?}, the configuration needs {shape:?}",
                    entry.tensor.shape()
                )));
            }
            Ok(entry.tensor.cast())
        };
        let mut params = Vec::with_capacity(self.store.params().len());
        for p in self.store.params() {
            params.push(lookup(&format!("param/{}", p.name), p.value.shape())?);
        }
        let mut moments = Vec::with_capacity(self.store.moments().len());
        for (name, m) in self.store.moments() {
            let c = [m.channels()];
            let mean = lookup(&format!("buffer/{name}.running_mean"), &c)?;
            let var = lookup(&format!("buffer/{name}.running_var"), &c)?;
            moments.push((mean, var));
        }
        for (p, value) in self.store.params_mut().iter_mut().zip(params) {
            p.value = value;
            p.grad = None;
        }
        for ((_, m), (mean, var)) in self.store.moments_mut().iter_mut().zip(moments) {
            m.mean = mean.into_vec();
            m.var = var.into_vec();
        }
        Ok(())
    }
}

fn run<T: Real>(layout: &Layout, config: &MacNetConfig, ctx: &mut ForwardCtx<'_, T>, image: Var) -> Result<ForwardTrace> {
    let (h, w) = config.input_size;
    match ctx.tape.shape(image) {
        [_, 3, ih, iw] if (*ih, *iw) == (h, w) => {}
        other => {
            return Err(Error::dim(format!("expected input [N, 3, {h}, {w}], got {other:?}")));
        }
    }
    let pyramid = build_pyramid(ctx.tape, image)?;

    let fuse = |ctx: &mut ForwardCtx<'_, T>, level: usize, main: Var| -> Result<Var> {
        let features = layout.atrous[level].forward(ctx, pyramid[level])?;
        ctx.check_finite(features, &format!("atrous{level}"))?;
        let adapted = layout.adapters[level].forward(ctx, features)?;
        ctx.check_finite(adapted, &format!("adapter{level}"))?;
        ctx.tape.add(main, adapted)
    };

    let stem = layout.stem.forward(ctx, image)?;
    ctx.check_finite(stem, "stem")?;
    let mut x = fuse(ctx, 0, stem)?;
    let stem_fused = x;
    let mut stages = [x; 4];
    for (s, blocks) in layout.stages.iter().enumerate() {
        for (b, block) in blocks.iter().enumerate() {
            x = block.forward(ctx, x)?;
            ctx.check_finite(x, &format!("stage{}.block{b}", s + 1))?;
        }
        x = fuse(ctx, s + 1, x)?;
        stages[s] = x;
    }

    let pooled = ctx.tape.global_avg_pool(x)?;
    let h1 = layout.fc1.forward(ctx, pooled)?;
    let h1 = ctx.tape.relu(h1);
    ctx.check_finite(h1, "fc1")?;
    let h1 = ctx.dropout(h1, config.dropout_p)?;
    let h2 = layout.fc2.forward(ctx, h1)?;
    ctx.check_finite(h2, "fc2")?;
    let h2 = ctx.dropout(h2, config.dropout_p)?;
    let logits = layout.classifier.forward(ctx, h2)?;
    ctx.check_finite(logits, "classifier")?;

    let params = ctx.param_vars().to_vec();
    Ok(ForwardTrace {
        logits,
        stem: stem_fused,
        stages,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MacNetConfig {
        let mut cfg = MacNetConfig::desk(3);
        cfg.input_size = (16, 16);
        cfg.fc_widths = (16, 8);
        cfg
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for cfg in [
            MacNetConfig::desk(4),
            tiny(),
            MacNetConfig {
                bn_enabled: false,
                ..tiny()
            },
        ] {
            let net = MacNet::<f32>::init(cfg.clone(), 1).unwrap();
            assert_eq!(net.num_parameters(), cfg.parameter_count());
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = MacNet::<f32>::init(tiny(), 5).unwrap();
        let b = MacNet::<f32>::init(tiny(), 5).unwrap();
        let c = MacNet::<f32>::init(tiny(), 6).unwrap();
        assert_eq!(a.store(), b.store());
        assert_ne!(a.store(), c.store());
    }

    #[test]
    fn shape_ladder_and_batch() {
        let mut net = MacNet::<f32>::init(tiny(), 2).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![7, 3, 16, 16], |i| (i % 13) as f32 / 13.0));
        let mut rng = stream(&[1]);
        let trace = net.forward(&mut tape, x, Some(&mut rng)).unwrap();
        assert_eq!(tape.shape(trace.logits), &[7, 3]);
        assert_eq!(tape.shape(trace.stem), &[7, 8, 16, 16]);
        for (i, &s) in trace.stages.iter().enumerate() {
            let f = 16 >> (i + 1);
            assert_eq!(tape.shape(s), &[7, [32, 64, 128, 256][i], f, f]);
        }
    }

    #[test]
    fn predict_requires_eval_mode() {
        let mut net = MacNet::<f32>::init(tiny(), 2).unwrap();
        let x = Tensor::zeros(vec![2, 3, 16, 16]);
        assert!(matches!(net.predict(&x, 2), Err(Error::Mode(_))));
        net.set_mode(Mode::Eval);
        net.zero_classifier();
        let p = net.predict(&x, 3).unwrap();
        assert!(p.probs.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
        assert_eq!(p.top_k[0], vec![0, 1, 2]);
    }

    #[test]
    fn non_finite_parameter_is_named() {
        let mut net = MacNet::<f32>::init(tiny(), 2).unwrap();
        net.store_mut().find_mut("fc2.bias").unwrap().value.data_mut()[0] = f32::NAN;
        net.set_mode(Mode::Eval);
        let err = net.eval_logits(&Tensor::zeros(vec![1, 3, 16, 16])).unwrap_err();
        assert!(matches!(err, Error::NumericFault { ref layer } if layer == "fc2.bias"), "{err}");
    }

    #[test]
    fn entries_round_trip() {
        let a = MacNet::<f32>::init(tiny(), 3).unwrap();
        let mut b = MacNet::<f32>::init(tiny(), 4).unwrap();
        b.load_entries(&a.to_entries()).unwrap();
        assert_eq!(a.store(), b.store());
        let mut wrong = MacNetConfig::desk(5);
        wrong.input_size = (16, 16);
        let mut c = MacNet::<f32>::init(wrong, 4).unwrap();
        assert!(matches!(c.load_entries(&a.to_entries()), Err(Error::Checkpoint(_))));
    }
}
