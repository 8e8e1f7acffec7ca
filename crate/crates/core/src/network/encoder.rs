//! 3D set-abstraction encoder, 2D convolutional encoder and the fusion
//! module producing the global feature `v`.

use super::layers::{Fwd, Init};
use super::ModelConfig;
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample, knn, PointCloud};
use crate::silhouette::Image;

pub(crate) fn init(init: &mut Init, cfg: &ModelConfig) -> Result<()> {
    let [s0, s1, s2] = cfg.widths.sa;
    init.mlp("enc3d.sa1", &[3, s0, s0])?;
    init.mlp("enc3d.sa2", &[3 + s0, s1, s1])?;
    init.mlp("enc3d.sa3", &[3 + s1, s2, s2])?;
    if cfg.use_attention {
        for (name, d) in [("enc3d.attn1", s0), ("enc3d.attn2", s1)] {
            for part in ["q", "k", "v"] {
                init.linear(&format!("{name}.{part}"), d, d)?;
            }
        }
    }
    let mut c_in = cfg.image_channels;
    for (i, c) in cfg.conv_channels().into_iter().enumerate() {
        init.conv(&format!("enc2d.conv{i}"), c_in, c, 3)?;
        c_in = c;
    }
    let g = cfg.widths.global;
    init.mlp("fuse.mlp", &[s1 + s2 + cfg.widths.conv, cfg.widths.fuse, cfg.widths.fuse])?;
    init.mlp("fuse.fc", &[cfg.widths.fuse, g, g, g])
}

/// Output of one set-abstraction block.
struct Abstraction {
    centres: Vec<[f64; 3]>,
    features: Var,
}

/// Samples `count` centres by farthest-point sampling (anchored at the point
/// nearest the centroid), groups `k` nearest source points around each, and
/// max-pools an MLP over centred coordinates (plus source features).
fn set_abstraction(
    fwd: &mut Fwd,
    name: &str,
    source: &[[f64; 3]],
    source_features: Option<Var>,
    count: usize,
    k: usize,
) -> Result<Abstraction> {
    let cloud = PointCloud::new(source.to_vec())?;
    let idx = farthest_point_sample(source, count, cloud.index_nearest_centroid())?;
    let centres: Vec<[f64; 3]> = idx.iter().map(|&i| source[i]).collect();
    let groups = knn(&centres, source, k)?;
    let flat: Vec<usize> = groups.concat();
    let owner: Vec<usize> = (0..count).flat_map(|c| std::iter::repeat_n(c, k)).collect();

    let src = fwd.tape.constant(Tensor::from_rows(source)?)?;
    let ctr = fwd.tape.constant(Tensor::from_rows(&centres)?)?;
    let grouped = fwd.tape.index_select(src, 0, flat.clone())?;
    let around = fwd.tape.index_select(ctr, 0, owner)?;
    let mut input = fwd.tape.sub(grouped, around)?;
    if let Some(f) = source_features {
        let gathered = fwd.tape.index_select(f, 0, flat)?;
        input = fwd.tape.concat(&[input, gathered], 1)?;
    }
    let h = fwd.mlp(name, input, 2, true)?;
    let w = fwd.tape.value(h).shape()[1];
    let h = fwd.tape.reshape(h, vec![count, k, w])?;
    let features = fwd.tape.reduce_max(h, 1)?;
    Ok(Abstraction { centres, features })
}

/// `(local features [n/16, sa1], shape code [1, sa2])`.
pub(crate) fn encode_3d(fwd: &mut Fwd, cfg: &ModelConfig, p_in: &PointCloud) -> Result<(Var, Var)> {
    if p_in.len() != cfg.n {
        return Err(Error::shape("encode_3d", format!("expected {} input points, got {}", cfg.n, p_in.len())));
    }
    let (c1, c2) = cfg.sa_centres();
    let k2 = cfg.k_group.min(c1);
    let sa1 = set_abstraction(fwd, "enc3d.sa1", p_in.points(), None, c1, cfg.k_group)?;
    let f1 = if cfg.use_attention { fwd.attention("enc3d.attn1", sa1.features)? } else { sa1.features };
    let sa2 = set_abstraction(fwd, "enc3d.sa2", &sa1.centres, Some(f1), c2, k2)?;
    let local = if cfg.use_attention { fwd.attention("enc3d.attn2", sa2.features)? } else { sa2.features };

    let ctr = fwd.tape.constant(Tensor::from_rows(&sa2.centres)?)?;
    let input = fwd.tape.concat(&[ctr, local], 1)?;
    let h = fwd.mlp("enc3d.sa3", input, 2, true)?;
    let code = fwd.tape.reduce_max(h, 0)?;
    let code = fwd.tape.reshape(code, vec![1, cfg.widths.sa[2]])?;
    Ok((local, code))
}

/// Channel-first tensor `[C, H, W]` of an interleaved image.
pub(crate) fn image_tensor(cfg: &ModelConfig, image: &Image) -> Result<Tensor> {
    if image.width != cfg.image_size || image.height != cfg.image_size || image.channels != cfg.image_channels {
        return Err(Error::shape(
            "encode_2d",
            format!(
                "expected {s}x{s}x{c} image, got {}x{}x{}",
                image.width,
                image.height,
                image.channels,
                s = cfg.image_size,
                c = cfg.image_channels
            ),
        ));
    }
    let (c, hw) = (image.channels, image.width * image.height);
    let mut data = vec![0.0; c * hw];
    for (i, px) in image.data.chunks_exact(c).enumerate() {
        for ch in 0..c {
            data[ch * hw + i] = px[ch];
        }
    }
    Tensor::new(vec![c, image.height, image.width], data)
}

/// Eight 3x3 convolutions, stride 2 on every second one, then global max
/// pooling to `[1, conv]`.
pub(crate) fn encode_2d(fwd: &mut Fwd, cfg: &ModelConfig, image: &Image) -> Result<Var> {
    let mut x = fwd.tape.constant(image_tensor(cfg, image)?)?;
    for i in 0..8 {
        let w = fwd.param(&format!("enc2d.conv{i}.w"))?;
        let b = fwd.param(&format!("enc2d.conv{i}.b"))?;
        let stride = if i % 2 == 1 { 2 } else { 1 };
        x = fwd.tape.conv2d(x, w, b, stride, 1)?;
        x = fwd.act(x)?;
    }
    let code = fwd.tape.global_max_pool_2d(x)?;
    fwd.tape.reshape(code, vec![1, cfg.widths.conv])
}

/// Concatenates both codes onto every local feature, encodes, pools, and
/// embeds with three fully connected layers into `v [1, global]`.
pub(crate) fn fuse(fwd: &mut Fwd, local: Var, code_3d: Var, code_2d: Var) -> Result<Var> {
    let rows = fwd.tape.value(local).shape()[0];
    let c3 = fwd.repeat_row(code_3d, rows)?;
    let c2 = fwd.repeat_row(code_2d, rows)?;
    let x = fwd.tape.concat(&[local, c3, c2], 1)?;
    let h = fwd.mlp("fuse.mlp", x, 2, true)?;
    let pooled = fwd.tape.reduce_max(h, 0)?;
    let w = fwd.tape.value(pooled).len();
    let pooled = fwd.tape.reshape(pooled, vec![1, w])?;
    fwd.mlp("fuse.fc", pooled, 3, false)
}
