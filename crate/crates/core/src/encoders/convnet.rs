use rand::Rng;

use super::{EncoderConfig, FeatureVec, FEATURE_DIM};
use crate::error::{Result, RoarError};
use crate::fieldsim::{CameraFrame, PathImage};
use crate::numerics::{Conv2d, Linear, ParamStore, Tape, Tensor, Var};

/// A stack of stride-2 convolutions with ReLU, flattened into a linear layer.
#[derive(Clone, Debug)]
struct ConvStack {
    convs: Vec<Conv2d>,
    head: Linear,
    in_shape: [usize; 3],
}

impl ConvStack {
    fn new(prefix: &str, channels: &[usize], in_h: usize, in_w: usize) -> Self {
        let mut convs = Vec::new();
        let (mut h, mut w) = (in_h, in_w);
        for (i, pair) in channels.windows(2).enumerate() {
            let c = Conv2d::new(&format!("{prefix}.conv{}", i + 1), pair[0], pair[1], h, w);
            h = c.geom.out_h();
            w = c.geom.out_w();
            convs.push(c);
        }
        let flat = channels[channels.len() - 1] * h * w;
        ConvStack {
            convs,
            head: Linear::new(&format!("{prefix}.fc"), flat, FEATURE_DIM),
            in_shape: [channels[0], in_h, in_w],
        }
    }

    fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for c in &self.convs {
            c.init(store, rng)?;
        }
        self.head.init(store, rng)
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1..] != self.in_shape {
            return Err(RoarError::invalid(format!(
                "encoder input {:?}, expected [B, {}, {}, {}]",
                shape, self.in_shape[0], self.in_shape[1], self.in_shape[2]
            )));
        }
        let batch = shape[0];
        let mut h = x;
        for c in &self.convs {
            let y = c.forward(tape, store, h)?;
            h = tape.relu(y);
        }
        let flat = tape.value(h).len() / batch;
        let h = tape.reshape(h, vec![batch, flat])?;
        self.head.forward(tape, store, h)
    }
}

fn single_feature(tape: &Tape, out: Var) -> Result<FeatureVec> {
    FeatureVec::new(tape.value(out).data().to_vec())
}

/// Planned-path encoder over the lower half of the path image.
#[derive(Clone, Debug)]
pub struct PathEncoder {
    stack: ConvStack,
    height: usize,
    width: usize,
}

impl PathEncoder {
    pub const PREFIX: &'static str = "encoders.path";

    pub fn new(cfg: &EncoderConfig) -> Self {
        PathEncoder {
            stack: ConvStack::new(Self::PREFIX, &[1, 4, 8, 8], cfg.image_height / 2, cfg.image_width),
            height: cfg.image_height,
            width: cfg.image_width,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.stack.init(store, rng)
    }

    /// `x` is a `[B, 1, H/2, W]` region of interest from [`path_batch`].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.stack.forward(tape, store, x)
    }

    pub fn encode(&self, store: &ParamStore, path: &PathImage) -> Result<FeatureVec> {
        if path.height != self.height || path.width != self.width {
            return Err(RoarError::invalid(format!(
                "path image {}x{}, expected {}x{}",
                path.height, path.width, self.height, self.width
            )));
        }
        let mut tape = Tape::inference();
        let x = tape.constant(path_batch(&[path])?);
        let out = self.forward(&mut tape, store, x)?;
        single_feature(&tape, out)
    }
}

/// Small convolutional camera encoder.
#[derive(Clone, Debug)]
pub struct CameraEncoder {
    stack: ConvStack,
    height: usize,
    width: usize,
}

impl CameraEncoder {
    pub const PREFIX: &'static str = "encoders.camera";

    pub fn new(cfg: &EncoderConfig) -> Self {
        CameraEncoder {
            stack: ConvStack::new(Self::PREFIX, &[3, 8, 16, 16, 16], cfg.image_height, cfg.image_width),
            height: cfg.image_height,
            width: cfg.image_width,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.stack.init(store, rng)
    }

    /// `x` is a `[B, 3, H, W]` batch from [`camera_batch`].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.stack.forward(tape, store, x)
    }

    pub fn encode(&self, store: &ParamStore, frame: &CameraFrame) -> Result<FeatureVec> {
        if frame.height != self.height || frame.width != self.width {
            return Err(RoarError::invalid(format!(
                "camera frame {}x{}, expected {}x{}",
                frame.height, frame.width, self.height, self.width
            )));
        }
        let mut tape = Tape::inference();
        let x = tape.constant(camera_batch(&[frame])?);
        let out = self.forward(&mut tape, store, x)?;
        single_feature(&tape, out)
    }
}

/// Stacks HWC frames into a `[B, 3, H, W]` tensor.
pub fn camera_batch(frames: &[&CameraFrame]) -> Result<Tensor> {
    let Some(first) = frames.first() else {
        return Err(RoarError::invalid("empty camera batch"));
    };
    let (h, w) = (first.height, first.width);
    let plane = h * w;
    let mut data = vec![0.0; frames.len() * 3 * plane];
    for (b, f) in frames.iter().enumerate() {
        if f.height != h || f.width != w {
            return Err(RoarError::invalid("camera batch mixes image sizes"));
        }
        let base = b * 3 * plane;
        for (i, px) in f.pixels.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                data[base + ch * plane + i] = px[ch] as f64;
            }
        }
    }
    Tensor::new(vec![frames.len(), 3, h, w], data)
}

/// Crops the lower half of each path image into a `[B, 1, H/2, W]` tensor.
pub fn path_batch(paths: &[&PathImage]) -> Result<Tensor> {
    let Some(first) = paths.first() else {
        return Err(RoarError::invalid("empty path batch"));
    };
    let (h, w) = (first.height, first.width);
    let top = h - h / 2;
    let mut data = Vec::with_capacity(paths.len() * (h / 2) * w);
    for p in paths {
        if p.height != h || p.width != w {
            return Err(RoarError::invalid("path batch mixes image sizes"));
        }
        data.extend(p.pixels[top * w..].iter().map(|&v| v as f64));
    }
    Tensor::new(vec![paths.len(), 1, h / 2, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldsim::WorldConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> EncoderConfig {
        EncoderConfig::from_world(&WorldConfig::default(), [256, 128])
    }

    #[test]
    fn zero_path_image_maps_to_zero_at_init() {
        let enc = PathEncoder::new(&cfg());
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let blank = PathImage {
            height: 48,
            width: 64,
            pixels: vec![0.0; 48 * 64],
            waypoints: vec![],
        };
        let f = enc.encode(&store, &blank).unwrap();
        assert!(f.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn camera_features_are_deterministic_and_finite() {
        let enc = CameraEncoder::new(&cfg());
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        enc.init(&mut store, &mut rng).unwrap();
        let frame = CameraFrame {
            height: 48,
            width: 64,
            pixels: (0..48 * 64 * 3).map(|_| rng.gen::<f32>()).collect(),
        };
        let a = enc.encode(&store, &frame).unwrap();
        let b = enc.encode(&store, &frame).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let enc = CameraEncoder::new(&cfg());
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let small = CameraFrame::filled(24, 32, [0.5; 3]);
        assert!(enc.encode(&store, &small).is_err());
    }

    #[test]
    fn camera_batch_is_channel_major() {
        let mut f = CameraFrame::filled(2, 2, [0.0; 3]);
        f.pixels[3 + 1] = 0.5; // pixel (0,1), green
        let t = camera_batch(&[&f]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        assert_eq!(t.data()[4 + 1], 0.5);
    }

    #[test]
    fn path_roi_is_the_lower_half() {
        let mut pixels = vec![0.0f32; 4 * 3];
        pixels[2 * 3] = 1.0; // row 2, col 0
        let p = PathImage {
            height: 4,
            width: 3,
            pixels,
            waypoints: vec![],
        };
        let t = path_batch(&[&p]).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2, 3]);
        assert_eq!(t.data()[0], 1.0);
    }
}
