//! Front-end encoders: reduce raw video or audio to a 25 Hz feature
//! sequence `[B, C, T]`.  Three learned variants (3D+2D residual visual,
//! 1D residual audio, plain 1D CNN audio) plus a passthrough for
//! precomputed features.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm1d, BuildCtx, Init};
use crate::ops::conv::ConvSpec;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Audio samples per output feature frame: 16 kHz waveform at 25 frames
/// per second.
pub const SAMPLES_PER_FRAME: usize = 640;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontendKind {
    Visual3dResidual,
    Audio1dResidual,
    Audio1dCnn,
    Passthrough,
}

#[derive(Debug, Clone)]
pub struct FrontendConfig {
    pub kind: FrontendKind,
    /// Scales every channel count in the ladder; 1 reproduces the full
    /// 64-128-256-512 ladder.
    pub width_multiplier: f64,
    pub output_dim: usize,
}

/// Scaled channel count, never below one.
fn ch(base: usize, wm: f64) -> usize {
    let c = crate::math::round(base as f64 * wm) as isize;
    c.max(1) as usize
}

impl FrontendConfig {
    pub fn visual(width_multiplier: f64) -> Self {
        FrontendConfig {
            kind: FrontendKind::Visual3dResidual,
            width_multiplier,
            output_dim: ch(512, width_multiplier),
        }
    }

    pub fn audio_residual(width_multiplier: f64) -> Self {
        FrontendConfig {
            kind: FrontendKind::Audio1dResidual,
            width_multiplier,
            output_dim: ch(512, width_multiplier),
        }
    }

    pub fn audio_cnn(width_multiplier: f64) -> Self {
        FrontendConfig {
            kind: FrontendKind::Audio1dCnn,
            width_multiplier,
            output_dim: ch(512, width_multiplier),
        }
    }

    pub fn passthrough(dim: usize) -> Self {
        FrontendConfig { kind: FrontendKind::Passthrough, width_multiplier: 1.0, output_dim: dim }
    }
}

/// Stage-by-stage record of runtime output shapes, for conformance checks.
pub type Trace = Vec<(String, Vec<usize>)>;

/// Convolution without bias followed by batch normalization.  The bias is
/// redundant under the normalization's shift.
struct ConvUnit {
    w: Tensor,
    bn: BatchNorm1d,
    spec: ConvSpec,
}

impl ConvUnit {
    fn new(
        ctx: &mut BuildCtx,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: &[usize],
        stride: &[usize],
        padding: &[usize],
    ) -> Result<Self> {
        let mut shape = vec![cout, cin];
        shape.extend_from_slice(kernel);
        let fan_in = cin * kernel.iter().product::<usize>();
        Ok(ConvUnit {
            w: ctx.param(&format!("{name}.w"), &shape, Init::kaiming(fan_in))?,
            bn: BatchNorm1d::new(ctx, &format!("{name}.bn"), cout)?,
            spec: ConvSpec::new(stride, padding),
        })
    }

    fn forward(&self, tape: &Tape, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = tape.conv(x, &self.w, None, &self.spec)?;
        bn_nd(tape, &self.bn, &y, train)
    }
}

/// Batch normalization over channel axis 1 for inputs with any number of
/// trailing spatial axes.
fn bn_nd(tape: &Tape, bn: &BatchNorm1d, x: &Tensor, train: bool) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if shape.len() == 3 {
        return bn.forward(tape, x, None, train);
    }
    let sp: usize = shape[2..].iter().product();
    let flat = tape.reshape(x, &[shape[0], shape[1], sp])?;
    let y = bn.forward(tape, &flat, None, train)?;
    tape.reshape(&y, &shape)
}

/// Two-convolution residual block with projection shortcut on channel or
/// stride change.  Works for 1D and 2D via the spatial rank.
struct BasicBlock {
    unit1: ConvUnit,
    unit2: ConvUnit,
    down: Option<ConvUnit>,
}

impl BasicBlock {
    fn new(
        ctx: &mut BuildCtx,
        name: &str,
        cin: usize,
        cout: usize,
        sdims: usize,
        stride: usize,
    ) -> Result<Self> {
        let k = vec![3; sdims];
        let p = vec![1; sdims];
        let s = vec![stride; sdims];
        let one = vec![1; sdims];
        let down = if stride != 1 || cin != cout {
            Some(ConvUnit::new(
                ctx,
                &format!("{name}.down"),
                cin,
                cout,
                &vec![1; sdims],
                &s,
                &vec![0; sdims],
            )?)
        } else {
            None
        };
        Ok(BasicBlock {
            unit1: ConvUnit::new(ctx, &format!("{name}.conv1"), cin, cout, &k, &s, &p)?,
            unit2: ConvUnit::new(ctx, &format!("{name}.conv2"), cout, cout, &k, &one, &p)?,
            down,
        })
    }

    fn forward(&self, tape: &Tape, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.unit1.forward(tape, x, train)?;
        let h = tape.swish(&h)?;
        let h = self.unit2.forward(tape, &h, train)?;
        let short = match &self.down {
            Some(d) => d.forward(tape, x, train)?,
            None => x.clone(),
        };
        let y = tape.add(&h, &short)?;
        tape.swish(&y)
    }
}

/// Residual stage channel ladder at a given width.
fn ladder(wm: f64) -> [usize; 4] {
    [ch(64, wm), ch(128, wm), ch(256, wm), ch(512, wm)]
}

fn residual_stages(
    ctx: &mut BuildCtx,
    name: &str,
    wm: f64,
    sdims: usize,
) -> Result<Vec<Vec<BasicBlock>>> {
    let c = ladder(wm);
    let mut stages = Vec::new();
    let mut cin = c[0];
    for (si, (&cout, &stride)) in c.iter().zip([1usize, 2, 2, 2].iter()).enumerate() {
        let mut blocks = Vec::new();
        for bi in 0..2 {
            let s = if bi == 0 { stride } else { 1 };
            let block_in = if bi == 0 { cin } else { cout };
            blocks.push(BasicBlock::new(
                ctx,
                &format!("{name}.s{}.b{bi}", si + 2),
                block_in,
                cout,
                sdims,
                s,
            )?);
        }
        stages.push(blocks);
        cin = cout;
    }
    Ok(stages)
}

struct VisualNet {
    stem: ConvUnit,
    stages: Vec<Vec<BasicBlock>>,
}

impl VisualNet {
    fn new(ctx: &mut BuildCtx, name: &str, wm: f64) -> Result<Self> {
        let c = ladder(wm);
        Ok(VisualNet {
            stem: ConvUnit::new(
                ctx,
                &format!("{name}.stem"),
                1,
                c[0],
                &[5, 7, 7],
                &[1, 2, 2],
                &[2, 3, 3],
            )?,
            stages: residual_stages(ctx, name, wm, 2)?,
        })
    }

    fn forward(&self, tape: &Tape, x: &Tensor, train: bool, trace: &mut Trace) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 5 || shape[1] != 1 {
            return Err(Error::shape(format!(
                "visual frontend: input must be [B, 1, T, H, W], got {shape:?}"
            )));
        }
        let (b, t) = (shape[0], shape[2]);
        if shape[3] < 12 || shape[4] < 12 {
            return Err(Error::shape(format!(
                "visual frontend: spatial extent must be at least 12, got {}x{}",
                shape[3], shape[4]
            )));
        }
        if !x.all_finite() {
            return Err(Error::data("visual frontend: non-finite input"));
        }
        fn stage_err(stage: &str) -> impl Fn(Error) -> Error + '_ {
            move |e| Error::config(format!("visual frontend {stage}: {e}"))
        }
        let h = self.stem.forward(tape, x, train).map_err(stage_err("stem"))?;
        let h = tape.swish(&h)?;
        trace.push((String::from("stem.conv"), h.shape().to_vec()));
        let h = tape
            .max_pool(&h, &[1, 3, 3], &[1, 2, 2], &[0, 1, 1])
            .map_err(stage_err("stem.pool"))?;
        trace.push((String::from("stem.pool"), h.shape().to_vec()));
        // Fold time into the batch axis so the 2D stages see [B*T, C, H, W].
        let c0 = h.shape()[1];
        let (hh, hw) = (h.shape()[3], h.shape()[4]);
        let h = tape.transpose(&h, &[0, 2, 1, 3, 4])?;
        let mut h = tape.reshape(&h, &[b * t, c0, hh, hw])?;
        trace.push((String::from("reshape"), h.shape().to_vec()));
        for (si, stage) in self.stages.iter().enumerate() {
            let name = format!("stage{}", si + 2);
            for block in stage {
                h = block.forward(tape, &h, train).map_err(stage_err(&name))?;
            }
            trace.push((name, h.shape().to_vec()));
        }
        let pooled = tape.mean_axes(&h, &[2, 3])?;
        trace.push((String::from("pool"), pooled.shape().to_vec()));
        let c = pooled.shape()[1];
        let out = tape.reshape(&pooled, &[b, t, c])?;
        let out = tape.transpose(&out, &[0, 2, 1])?;
        trace.push((String::from("output"), out.shape().to_vec()));
        Ok(out)
    }
}

fn check_audio_input(x: &Tensor) -> Result<usize> {
    let shape = x.shape();
    if shape.len() != 3 || shape[1] != 1 {
        return Err(Error::shape(format!(
            "audio frontend: input must be [B, 1, T], got {shape:?}"
        )));
    }
    let t = shape[2];
    if t < SAMPLES_PER_FRAME {
        return Err(Error::data(format!(
            "audio frontend: input of {t} samples is shorter than one output frame ({SAMPLES_PER_FRAME} samples)"
        )));
    }
    if !x.all_finite() {
        return Err(Error::data("audio frontend: non-finite input"));
    }
    Ok(t)
}

struct AudioResNet {
    stem: ConvUnit,
    stages: Vec<Vec<BasicBlock>>,
}

impl AudioResNet {
    fn new(ctx: &mut BuildCtx, name: &str, wm: f64) -> Result<Self> {
        let c = ladder(wm);
        Ok(AudioResNet {
            stem: ConvUnit::new(ctx, &format!("{name}.stem"), 1, c[0], &[80], &[4], &[38])?,
            stages: residual_stages(ctx, name, wm, 1)?,
        })
    }

    fn forward(&self, tape: &Tape, x: &Tensor, train: bool, trace: &mut Trace) -> Result<Tensor> {
        let t_a = check_audio_input(x)?;
        let h = self.stem.forward(tape, x, train)?;
        let h = tape.swish(&h)?;
        trace.push((String::from("stem"), h.shape().to_vec()));
        let mut len = t_a / 4;
        let mut h = h;
        for (si, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = block.forward(tape, &h, train)?;
            }
            if si > 0 {
                // Strided stages round up under symmetric padding; the
                // contract is floor division, so drop the extra frame.
                len /= 2;
                if h.shape()[2] > len {
                    h = tape.slice_axis(&h, 2, 0, len)?;
                }
            }
            trace.push((format!("stage{}", si + 2), h.shape().to_vec()));
        }
        let out = tape.avg_pool1d(&h, 20, 20, 0)?;
        trace.push((String::from("pool"), out.shape().to_vec()));
        Ok(out)
    }
}

struct AudioCnn {
    units: Vec<ConvUnit>,
}

impl AudioCnn {
    fn new(ctx: &mut BuildCtx, name: &str, wm: f64) -> Result<Self> {
        let c = ladder(wm);
        // (cin, cout, kernel, stride, padding); the paddings make each
        // stage an exact floor division of the temporal length.
        let plan: [(usize, usize, usize, usize, usize); 5] = [
            (1, c[0], 80, 4, 38),
            (c[0], c[0], 20, 4, 8),
            (c[0], c[1], 4, 2, 1),
            (c[1], c[2], 4, 2, 1),
            (c[2], c[3], 4, 2, 1),
        ];
        let mut units = Vec::new();
        for (i, &(cin, cout, k, s, p)) in plan.iter().enumerate() {
            units.push(ConvUnit::new(
                ctx,
                &format!("{name}.conv{}", i + 1),
                cin,
                cout,
                &[k],
                &[s],
                &[p],
            )?);
        }
        Ok(AudioCnn { units })
    }

    fn forward(&self, tape: &Tape, x: &Tensor, train: bool, trace: &mut Trace) -> Result<Tensor> {
        check_audio_input(x)?;
        let mut h = x.clone();
        for (i, unit) in self.units.iter().enumerate() {
            h = unit.forward(tape, &h, train)?;
            h = tape.swish(&h)?;
            trace.push((format!("conv{}", i + 1), h.shape().to_vec()));
        }
        let out = tape.avg_pool1d(&h, 5, 5, 0)?;
        trace.push((String::from("pool"), out.shape().to_vec()));
        Ok(out)
    }
}

enum Net {
    Visual(VisualNet),
    AudioRes(AudioResNet),
    AudioCnn(AudioCnn),
    Pass,
}

/// A front-end encoder with its parameters.  Pure given fixed parameters;
/// train mode only changes which batch statistics normalization uses.
pub struct Frontend {
    pub cfg: FrontendConfig,
    net: Net,
}

impl Frontend {
    pub fn new(ctx: &mut BuildCtx, name: &str, cfg: &FrontendConfig) -> Result<Self> {
        let net = match cfg.kind {
            FrontendKind::Visual3dResidual => {
                Net::Visual(VisualNet::new(ctx, name, cfg.width_multiplier)?)
            }
            FrontendKind::Audio1dResidual => {
                Net::AudioRes(AudioResNet::new(ctx, name, cfg.width_multiplier)?)
            }
            FrontendKind::Audio1dCnn => {
                Net::AudioCnn(AudioCnn::new(ctx, name, cfg.width_multiplier)?)
            }
            FrontendKind::Passthrough => Net::Pass,
        };
        Ok(Frontend { cfg: cfg.clone(), net })
    }

    /// Runs the front-end and records each stage's output shape.
    pub fn forward_traced(
        &self,
        tape: &Tape,
        x: &Tensor,
        train: bool,
    ) -> Result<(Tensor, Trace)> {
        let mut trace = Trace::new();
        let out = match &self.net {
            Net::Visual(net) => net.forward(tape, x, train, &mut trace)?,
            Net::AudioRes(net) => net.forward(tape, x, train, &mut trace)?,
            Net::AudioCnn(net) => net.forward(tape, x, train, &mut trace)?,
            Net::Pass => {
                if x.rank() != 3 {
                    return Err(Error::shape("passthrough frontend: input must be [B, D, T]"));
                }
                if x.shape()[1] != self.cfg.output_dim {
                    return Err(Error::shape(format!(
                        "passthrough frontend: expected {} feature dims, got {}",
                        self.cfg.output_dim,
                        x.shape()[1]
                    )));
                }
                x.clone()
            }
        };
        if out.shape()[1] != self.cfg.output_dim {
            return Err(Error::shape(format!(
                "frontend produced {} channels, config promises {}",
                out.shape()[1],
                self.cfg.output_dim
            )));
        }
        Ok((out, trace))
    }

    /// Front-end features `[B, C, T]`.
    pub fn forward(&self, tape: &Tape, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.forward_traced(tape, x, train)?.0)
    }
}
