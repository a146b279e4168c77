//! Inference-only GoogLeNet (Inception v1) backbone read from a weight
//! manifest. Kernel sizes and channel counts come from the tensor shapes,
//! so reduced-width variants load through the same code.
//!
//! Batch normalisation, where the source network had it, is expected to be
//! folded into the convolution weights and biases before export.

use comixify_nn::kernels::{conv2d_forward, maxpool2d_forward};
use comixify_nn::{init, ParamStore};
use ndarray::{concatenate, Array1, Array4, ArrayView4, Axis, Ix1, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::{to_batch, Frame};

pub const INPUT_SIDE: u32 = 224;
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

pub const INCEPTIONS: [&str; 9] = [
    "inception3a", "inception3b", "inception4a", "inception4b", "inception4c",
    "inception4d", "inception4e", "inception5a", "inception5b",
];

/// (1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool proj) of the reference network.
const REFERENCE_WIDTHS: [[usize; 6]; 9] = [
    [64, 96, 128, 16, 32, 32],
    [128, 128, 192, 32, 96, 64],
    [192, 96, 208, 16, 48, 64],
    [160, 112, 224, 24, 64, 64],
    [128, 128, 256, 24, 64, 64],
    [112, 144, 288, 32, 64, 64],
    [256, 160, 320, 32, 128, 128],
    [256, 160, 320, 32, 128, 128],
    [384, 192, 384, 48, 128, 128],
];

struct Conv {
    w: Array4<f32>,
    b: Array1<f32>,
    stride: usize,
}

impl Conv {
    fn load(p: &ParamStore<f32>, name: &str, in_ch: usize, stride: usize) -> Result<Conv> {
        let get = |suffix: &str| {
            p.get(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::ModelLoad(format!("missing tensor `{name}.{suffix}`")))
        };
        let w = get("weight")?
            .clone()
            .into_dimensionality::<Ix4>()
            .map_err(|_| Error::ModelLoad(format!("`{name}.weight` must be 4-d")))?;
        let b = get("bias")?
            .clone()
            .into_dimensionality::<Ix1>()
            .map_err(|_| Error::ModelLoad(format!("`{name}.bias` must be 1-d")))?;
        let (o, c, kh, kw) = w.dim();
        if c != in_ch || b.len() != o || kh != kw || kh % 2 == 0 {
            return Err(Error::ModelLoad(format!(
                "`{name}`: weight {:?} / bias {} incompatible with {in_ch} input channels",
                w.shape(),
                b.len()
            )));
        }
        Ok(Conv { w, b, stride })
    }

    fn out_ch(&self) -> usize {
        self.w.dim().0
    }

    fn relu(&self, x: &ArrayView4<f32>) -> Array4<f32> {
        let pad = self.w.dim().2 / 2;
        let mut y = conv2d_forward(x, &self.w.view(), Some(&self.b.view()), self.stride, pad);
        y.mapv_inplace(|v| v.max(0.0));
        y
    }
}

struct Inception {
    b1: Conv,
    b2: [Conv; 2],
    b3: [Conv; 2],
    b4: Conv,
}

impl Inception {
    fn load(p: &ParamStore<f32>, name: &str, in_ch: usize) -> Result<Inception> {
        let b1 = Conv::load(p, &format!("{name}.branch1"), in_ch, 1)?;
        let b2a = Conv::load(p, &format!("{name}.branch2.0"), in_ch, 1)?;
        let b2b = Conv::load(p, &format!("{name}.branch2.1"), b2a.out_ch(), 1)?;
        let b3a = Conv::load(p, &format!("{name}.branch3.0"), in_ch, 1)?;
        let b3b = Conv::load(p, &format!("{name}.branch3.1"), b3a.out_ch(), 1)?;
        let b4 = Conv::load(p, &format!("{name}.branch4"), in_ch, 1)?;
        Ok(Inception { b1, b2: [b2a, b2b], b3: [b3a, b3b], b4 })
    }

    fn out_ch(&self) -> usize {
        self.b1.out_ch() + self.b2[1].out_ch() + self.b3[1].out_ch() + self.b4.out_ch()
    }

    fn forward(&self, x: &ArrayView4<f32>) -> Array4<f32> {
        let y1 = self.b1.relu(x);
        let y2 = self.b2[1].relu(&self.b2[0].relu(x).view());
        let y3 = self.b3[1].relu(&self.b3[0].relu(x).view());
        let pooled = maxpool2d_forward(x, 3, 1, 1, true).0;
        let y4 = self.b4.relu(&pooled.view());
        concatenate(Axis(1), &[y1.view(), y2.view(), y3.view(), y4.view()]).expect("matching spatial dims")
    }
}

pub struct GoogLeNet {
    conv1: Conv,
    conv2: Conv,
    conv3: Conv,
    blocks: Vec<Inception>,
}

impl GoogLeNet {
    pub fn from_params(p: &ParamStore<f32>) -> Result<GoogLeNet> {
        let conv1 = Conv::load(p, "conv1", 3, 2)?;
        let conv2 = Conv::load(p, "conv2", conv1.out_ch(), 1)?;
        let conv3 = Conv::load(p, "conv3", conv2.out_ch(), 1)?;
        let mut ch = conv3.out_ch();
        let mut blocks = Vec::with_capacity(INCEPTIONS.len());
        for name in INCEPTIONS {
            let b = Inception::load(p, name, ch)?;
            ch = b.out_ch();
            blocks.push(b);
        }
        Ok(GoogLeNet { conv1, conv2, conv3, blocks })
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().map_or(0, Inception::out_ch)
    }

    /// Globally pooled output of the last inception block.
    pub fn describe(&self, frame: &Frame) -> Vec<f32> {
        let crop = frame.resize_center_crop(INPUT_SIDE);
        let mut x = to_batch(&[&crop], 0.0, 1.0);
        for c in 0..3 {
            x.index_axis_mut(Axis(1), c)
                .mapv_inplace(|v| (v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]);
        }
        let pool = |x: &Array4<f32>, k: usize| maxpool2d_forward(&x.view(), k, 2, 0, true).0;
        let x = pool(&self.conv1.relu(&x.view()), 3);
        let x = self.conv2.relu(&x.view());
        let mut x = pool(&self.conv3.relu(&x.view()), 3);
        for (i, b) in self.blocks.iter().enumerate() {
            x = b.forward(&x.view());
            // max pools after 3b and 4e
            if i == 1 {
                x = pool(&x, 3);
            } else if i == 6 {
                x = pool(&x, 2);
            }
        }
        x.mean_axis(Axis(3))
            .and_then(|m| m.mean_axis(Axis(2)))
            .expect("nonempty spatial dims")
            .into_iter()
            .collect()
    }
}

/// Randomly initialised parameters with every channel count divided by
/// `width_div`; `width_div = 1` reproduces the reference 1024-d network.
pub fn random_params(seed: u64, width_div: usize) -> ParamStore<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = |c: usize| (c / width_div).max(1);
    let mut p = ParamStore::new();
    let mut conv = |p: &mut ParamStore<f32>, name: &str, o: usize, i: usize, k: usize| {
        p.insert(format!("{name}.weight"), init::kaiming_normal(&mut rng, &[o, i, k, k], i * k * k));
        p.insert(format!("{name}.bias"), init::zeros(&[o]));
    };
    conv(&mut p, "conv1", d(64), 3, 7);
    conv(&mut p, "conv2", d(64), d(64), 1);
    conv(&mut p, "conv3", d(192), d(64), 3);
    let mut ch = d(192);
    for (name, wd) in INCEPTIONS.iter().zip(REFERENCE_WIDTHS) {
        let [c1, r3, c3, r5, c5, pp] = wd.map(d);
        conv(&mut p, &format!("{name}.branch1"), c1, ch, 1);
        conv(&mut p, &format!("{name}.branch2.0"), r3, ch, 1);
        conv(&mut p, &format!("{name}.branch2.1"), c3, r3, 3);
        conv(&mut p, &format!("{name}.branch3.0"), r5, ch, 1);
        conv(&mut p, &format!("{name}.branch3.1"), c5, r5, 5);
        conv(&mut p, &format!("{name}.branch4"), pp, ch, 1);
        ch = c1 + c3 + c5 + pp;
    }
    p
}
