use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetError, NetworkConfig, PredictionSet};
use crate::gradcore::{BatchNormState, ModelParams, Shape, Tape, Tensor, Var};

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    FanInUniform { fan_in: usize },
    Constant(f32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

/// Every learnable tensor of the network, in a fixed order.
#[derive(Clone, Debug, Default)]
pub struct Layout {
    pub params: Vec<ParamSpec>,
    /// Batch-norm layers (by prefix) and their channel counts.
    pub batch_norms: Vec<(String, usize)>,
}

impl Layout {
    fn add_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        let fan_in = cin * k * k;
        self.params.push(ParamSpec {
            name: format!("{name}.kernel"),
            shape: Shape::new(cout, cin, k, k),
            init: Init::FanInUniform { fan_in },
        });
        self.params.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: Shape::new(1, cout, 1, 1),
            init: Init::Constant(0.0),
        });
    }

    fn add_conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.add_conv(name, cin, cout, k);
        self.params.push(ParamSpec {
            name: format!("{name}.gamma"),
            shape: Shape::new(1, cout, 1, 1),
            init: Init::Constant(1.0),
        });
        self.params.push(ParamSpec {
            name: format!("{name}.beta"),
            shape: Shape::new(1, cout, 1, 1),
            init: Init::Constant(0.0),
        });
        self.batch_norms.push((name.to_string(), cout));
    }

    fn add_residual_block(&mut self, name: &str, ch: usize) {
        self.add_conv_bn(&format!("{name}.conv1"), ch, ch, 3);
        self.add_conv_bn(&format!("{name}.conv2"), ch, ch, 3);
    }

    fn add_dspp(&mut self, cin: usize, cout: usize, branches: usize) {
        for i in 0..branches {
            self.add_conv_bn(&format!("dspp.branch{i}"), cin, cout, 3);
        }
        self.add_conv("dspp.fuse", branches * cout, cout, 1);
    }

    /// Parameters of one dilated residual block named `name` on `ch` channels.
    pub fn residual_block(name: &str, ch: usize) -> Self {
        let mut l = Layout::default();
        l.add_residual_block(name, ch);
        l
    }

    /// Parameters of the dilated pyramid (prefix `dspp`) mapping `cin` to `cout` channels.
    pub fn dspp(cin: usize, cout: usize, branches: usize) -> Self {
        let mut l = Layout::default();
        l.add_dspp(cin, cout, branches);
        l
    }

    /// Seeded initial values for every tensor and batch-norm buffer of the layout.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::default();
        for spec in &self.params {
            let t = match spec.init {
                Init::FanInUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    Tensor::from_fn(spec.shape, |_| rng.gen_range(-bound..bound))
                }
                Init::Constant(v) => Tensor::full(spec.shape, v),
            };
            params.tensors.insert(spec.name.clone(), t);
        }
        for (name, ch) in &self.batch_norms {
            params
                .buffers
                .insert(format!("{name}.running_mean"), Tensor::vector(vec![0.0; *ch]));
            params
                .buffers
                .insert(format!("{name}.running_var"), Tensor::vector(vec![1.0; *ch]));
        }
        params
    }

    pub fn for_config(cfg: &NetworkConfig) -> Self {
        let c = cfg.stage_channels;
        let mut l = Layout::default();
        for k in 0..3 {
            let cin = if k == 0 { 1 } else { c[k - 1] };
            l.add_conv_bn(&format!("enc{k}.conv1"), cin, c[k], 3);
            l.add_conv_bn(&format!("enc{k}.conv2"), c[k], c[k], 3);
            l.add_conv_bn(&format!("enc{k}.scale1"), 1, c[k], 3);
            l.add_conv_bn(&format!("enc{k}.scale2"), c[k], c[k], 3);
            l.add_residual_block(&format!("enc{k}.drb"), c[k]);
        }
        for i in 0..cfg.drb_rates_bottleneck.len() {
            l.add_residual_block(&format!("bottleneck.drb{i}"), c[2]);
        }
        l.add_dspp(c[2], c[3], cfg.dspp_rates.len());
        for k in (0..3).rev() {
            l.add_conv_bn(&format!("dec{k}.conv1"), c[k + 1] + c[k], c[k], 3);
            l.add_conv_bn(&format!("dec{k}.conv2"), c[k], c[k], 3);
        }
        // head m sits on decoder resolution m-1; the last head on the pyramid output
        for (m, ch) in [(1, c[0]), (2, c[1]), (3, c[2]), (4, c[3])] {
            l.add_conv(&format!("head{m}.conv"), ch, 1, 3);
            l.add_conv(&format!("head{m}.out"), 1, 1, 1);
        }
        l
    }
}

/// The dilated encoder-decoder network with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VesselNet {
    pub config: NetworkConfig,
    pub params: ModelParams,
}

/// Recorded forward pass: the four prediction maps plus handles to every parameter.
pub struct TapeForward {
    /// Scale `m = 1..=4` at index `m - 1`.
    pub maps: Vec<Var>,
    pub param_vars: BTreeMap<String, Var>,
    /// Running statistics after this pass (training mode only).
    pub bn_updates: BTreeMap<String, Tensor>,
}

pub struct ForwardOutput {
    pub predictions: PredictionSet,
    pub bn_updates: BTreeMap<String, Tensor>,
}

impl VesselNet {
    /// Fresh network with seeded fan-in-scaled uniform kernels, zero biases,
    /// unit batch-norm scale and standard running statistics.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let params = Layout::for_config(&config).init_params(seed);
        Ok(Self { config, params })
    }

    /// Wraps existing parameters, checking every tensor the layout expects is present.
    pub fn from_params(config: NetworkConfig, params: ModelParams) -> Result<Self, NetError> {
        config.validate()?;
        let layout = Layout::for_config(&config);
        for spec in &layout.params {
            match params.tensors.get(&spec.name) {
                None => return Err(NetError::MissingParam(spec.name.clone())),
                Some(t) if t.shape() != spec.shape => {
                    return Err(NetError::Config(format!(
                        "parameter `{}` has shape {}, expected {}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        for (name, _) in &layout.batch_norms {
            for suffix in ["running_mean", "running_var"] {
                let key = format!("{name}.{suffix}");
                if !params.buffers.contains_key(&key) {
                    return Err(NetError::MissingParam(key));
                }
            }
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Names of the convolution kernels, the tensors covered by weight decay.
    pub fn kernel_names(&self) -> impl Iterator<Item = &String> {
        self.params.tensors.keys().filter(|k| k.ends_with(".kernel"))
    }

    /// Runs the network on a `(batch, 1, H, W)` image tensor in `[0, 1]`.
    pub fn forward(&self, image: &Tensor, training: bool) -> Result<ForwardOutput, NetError> {
        let mut tape = Tape::new();
        let input = tape.constant(image.clone());
        let fwd = self.forward_on_tape(&mut tape, input, training)?;
        let maps = fwd.maps.iter().map(|&v| tape.value(v).clone()).collect();
        Ok(ForwardOutput {
            predictions: PredictionSet::new(maps)?,
            bn_updates: fwd.bn_updates,
        })
    }

    /// Records the forward pass on `tape`. Every parameter becomes a named tape leaf.
    pub fn forward_on_tape(&self, tape: &mut Tape, image: Var, training: bool) -> Result<TapeForward, NetError> {
        let shape = tape.value(image).shape();
        let (h, w) = self.config.input_size;
        if shape.channels != 1 || shape.height != h || shape.width != w || shape.batch == 0 {
            return Err(NetError::InputSize {
                expected: (h, w),
                found: shape,
            });
        }
        let mut ctx = Ctx::new(tape, &self.params, &self.config, training);
        let maps = ctx.run(image)?;
        Ok(TapeForward {
            maps,
            param_vars: ctx.vars,
            bn_updates: ctx.bn_updates,
        })
    }
}

/// Records one dilated residual block: two `(conv rate r, ReLU, BN)` layers
/// added back onto `x`. Returns the output and the updated running statistics.
pub fn dilated_residual_block(
    tape: &mut Tape,
    params: &ModelParams,
    config: &NetworkConfig,
    name: &str,
    x: Var,
    rate: usize,
    training: bool,
) -> Result<(Var, BTreeMap<String, Tensor>), NetError> {
    let mut ctx = Ctx::new(tape, params, config, training);
    let y = ctx.residual_block(name, x, rate)?;
    Ok((y, ctx.bn_updates))
}

/// Records the dilated pyramid over bottleneck features `x` using `config.dspp_rates`.
pub fn dspp(
    tape: &mut Tape,
    params: &ModelParams,
    config: &NetworkConfig,
    x: Var,
    training: bool,
) -> Result<(Var, BTreeMap<String, Tensor>), NetError> {
    let mut ctx = Ctx::new(tape, params, config, training);
    let y = ctx.dspp(x)?;
    Ok((y, ctx.bn_updates))
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    params: &'a ModelParams,
    config: &'a NetworkConfig,
    vars: BTreeMap<String, Var>,
    training: bool,
    bn_updates: BTreeMap<String, Tensor>,
}

impl<'a> Ctx<'a> {
    fn new(tape: &'a mut Tape, params: &'a ModelParams, config: &'a NetworkConfig, training: bool) -> Self {
        Self {
            tape,
            params,
            config,
            vars: BTreeMap::new(),
            training,
            bn_updates: BTreeMap::new(),
        }
    }

    fn param(&mut self, name: &str) -> Result<Var, NetError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .tensors
            .get(name)
            .ok_or_else(|| NetError::MissingParam(name.to_string()))?;
        let v = self.tape.param(name, t.clone());
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn buffer(&self, name: &str) -> Result<Vec<f32>, NetError> {
        self.params
            .buffers
            .get(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    fn conv(&mut self, name: &str, x: Var, dilation: usize) -> Result<Var, NetError> {
        let k = self.param(&format!("{name}.kernel"))?;
        let b = self.param(&format!("{name}.bias"))?;
        Ok(self.tape.conv2d(x, k, b, dilation)?)
    }

    /// conv -> ReLU -> batch norm.
    fn conv_relu_bn(&mut self, name: &str, x: Var, dilation: usize) -> Result<Var, NetError> {
        let y = self.conv(name, x, dilation)?;
        let y = self.tape.relu(y);
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let mean_key = format!("{name}.running_mean");
        let var_key = format!("{name}.running_var");
        let cfg = self.config;
        let state = BatchNormState {
            gamma: Vec::new(),
            beta: Vec::new(),
            running_mean: self.buffer(&mean_key)?,
            running_var: self.buffer(&var_key)?,
            momentum: cfg.bn_momentum,
            eps: cfg.bn_eps,
        };
        let (out, new_state) = self.tape.batch_norm(y, gamma, beta, &state, self.training)?;
        if self.training {
            self.bn_updates
                .insert(mean_key, Tensor::vector(new_state.running_mean));
            self.bn_updates.insert(var_key, Tensor::vector(new_state.running_var));
        }
        Ok(out)
    }

    fn residual_block(&mut self, name: &str, x: Var, rate: usize) -> Result<Var, NetError> {
        let y = self.conv_relu_bn(&format!("{name}.conv1"), x, rate)?;
        let y = self.conv_relu_bn(&format!("{name}.conv2"), y, rate)?;
        Ok(self.tape.add(x, y)?)
    }

    fn dspp(&mut self, x: Var) -> Result<Var, NetError> {
        let rates = self.config.dspp_rates.clone();
        let s = self.tape.value(x).shape();
        let max_rate = rates.iter().copied().max().unwrap_or(1);
        let span = 2 * max_rate + 1;
        if self.config.strict_dspp_extent && (s.height < span || s.width < span) {
            return Err(NetError::PyramidTooSmall {
                height: s.height,
                width: s.width,
                rate: max_rate,
                span,
            });
        }
        let mut branches = Vec::with_capacity(rates.len());
        for (i, &r) in rates.iter().enumerate() {
            branches.push(self.conv_relu_bn(&format!("dspp.branch{i}"), x, r)?);
        }
        let cat = self.tape.concat_channels(&branches)?;
        self.conv("dspp.fuse", cat, 1)
    }

    fn head(&mut self, m: usize, x: Var) -> Result<Var, NetError> {
        let (h, w) = self.config.input_size;
        let y = self.conv(&format!("head{m}.conv"), x, 1)?;
        let y = self.tape.resize_bilinear(y, h, w)?;
        let y = self.conv(&format!("head{m}.out"), y, 1)?;
        Ok(self.tape.sigmoid(y))
    }

    fn run(&mut self, image: Var) -> Result<Vec<Var>, NetError> {
        let cfg = self.config.clone();
        let (h, w) = cfg.input_size;
        let mut x = image;
        let mut skips = Vec::with_capacity(3);
        for k in 0..3 {
            let y = self.conv_relu_bn(&format!("enc{k}.conv1"), x, 1)?;
            let y = self.conv_relu_bn(&format!("enc{k}.conv2"), y, 1)?;
            let scaled = if k == 0 {
                image
            } else {
                self.tape.resize_bilinear(image, h >> k, w >> k)?
            };
            let z = self.conv_relu_bn(&format!("enc{k}.scale1"), scaled, 1)?;
            let z = self.conv_relu_bn(&format!("enc{k}.scale2"), z, 1)?;
            let fused = self.tape.add(y, z)?;
            let skip = self.residual_block(&format!("enc{k}.drb"), fused, cfg.drb_rate_encoder)?;
            skips.push(skip);
            x = self.tape.downsample2x(skip)?;
        }
        for (i, &rate) in cfg.drb_rates_bottleneck.iter().enumerate() {
            x = self.residual_block(&format!("bottleneck.drb{i}"), x, rate)?;
        }
        let pyramid = self.dspp(x)?;

        let mut decoded = Vec::with_capacity(3);
        let mut d = pyramid;
        for k in (0..3).rev() {
            let up = self.tape.resize_bilinear(d, h >> k, w >> k)?;
            let cat = self.tape.concat_channels(&[up, skips[k]])?;
            let y = self.conv_relu_bn(&format!("dec{k}.conv1"), cat, 1)?;
            d = self.conv_relu_bn(&format!("dec{k}.conv2"), y, 1)?;
            decoded.push(d);
        }
        // decoded is [res2, res1, res0]
        let sources = [decoded[2], decoded[1], decoded[0], pyramid];
        let mut maps = Vec::with_capacity(4);
        for (i, &src) in sources.iter().enumerate() {
            maps.push(self.head(i + 1, src)?);
        }
        Ok(maps)
    }
}
