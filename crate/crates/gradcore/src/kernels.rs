//! Forward and adjoint kernels for the spatial ops. All maps are `[C, H, W]`.

use crate::error::{shape_err, Result};
use crate::graph::{ConvSpec, PadMode, SobelAxis};
use crate::tensor::Tensor;

pub(crate) fn chw(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(shape_err(op, format!("expected [C, H, W], got {s:?}"))),
    }
}

/// Maps a padded coordinate back to a source index.
fn source_index(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    let n_i = n as isize;
    if (0..n_i).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let r = if i < 0 { -i } else { 2 * (n_i - 1) - i };
            Some(r.clamp(0, n_i - 1) as usize)
        }
    }
}

fn pad(x: &Tensor, p: usize, mode: PadMode) -> Result<Tensor> {
    let (c, h, w) = chw(x, "pad")?;
    if mode == PadMode::Reflect && p > 0 && (p >= h.max(2) || p >= w.max(2)) {
        return Err(shape_err(
            "pad",
            format!("reflect padding {p} too large for {h}x{w}"),
        ));
    }
    if p == 0 {
        return Ok(x.clone());
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let src = x.data();
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        for y in 0..hp {
            let sy = source_index(y as isize - p as isize, h, mode);
            for xx in 0..wp {
                let sx = source_index(xx as isize - p as isize, w, mode);
                if let (Some(sy), Some(sx)) = (sy, sx) {
                    out[(ch * hp + y) * wp + xx] = src[(ch * h + sy) * w + sx];
                }
            }
        }
    }
    Tensor::new(vec![c, hp, wp], out)
}

/// Adjoint of [`pad`]: folds a padded gradient back onto the source grid.
fn unpad(g: &Tensor, h: usize, w: usize, p: usize, mode: PadMode) -> Result<Tensor> {
    if p == 0 {
        return Ok(g.clone());
    }
    let (c, hp, wp) = chw(g, "unpad")?;
    let src = g.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..hp {
            let sy = source_index(y as isize - p as isize, h, mode);
            for xx in 0..wp {
                let sx = source_index(xx as isize - p as isize, w, mode);
                if let (Some(sy), Some(sx)) = (sy, sx) {
                    out[(ch * h + sy) * w + sx] += src[(ch * hp + y) * wp + xx];
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

struct ConvGeom {
    cin: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    hp: usize,
    wp: usize,
    ho: usize,
    wo: usize,
}

fn conv_geom(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> Result<ConvGeom> {
    let (cin, h, wd) = chw(x, "conv2d")?;
    let [cout, cin_g, kh, kw] = *w.shape() else {
        return Err(shape_err(
            "conv2d",
            format!("weight must be 4-D, got {:?}", w.shape()),
        ));
    };
    let g = spec.groups.max(1);
    if spec.stride == 0 || cin % g != 0 || cout % g != 0 || cin / g != cin_g {
        return Err(shape_err(
            "conv2d",
            format!(
                "input channels {cin}, weight {:?}, groups {g}, stride {}",
                w.shape(),
                spec.stride
            ),
        ));
    }
    let (hp, wp) = (h + 2 * spec.padding, wd + 2 * spec.padding);
    if hp < kh || wp < kw {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}"),
        ));
    }
    Ok(ConvGeom {
        cin,
        cout,
        cin_g,
        cout_g: cout / g,
        kh,
        kw,
        hp,
        wp,
        ho: (hp - kh) / spec.stride + 1,
        wo: (wp - kw) / spec.stride + 1,
    })
}

pub(crate) fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let geo = conv_geom(x, w, spec)?;
    if let Some(b) = b {
        if b.len() != geo.cout {
            return Err(shape_err(
                "conv2d",
                format!("bias has {} values for {} channels", b.len(), geo.cout),
            ));
        }
    }
    let xp = pad(x, spec.padding, spec.pad_mode)?;
    let xd = xp.data();
    let wd = w.data();
    let s = spec.stride;
    let mut out = vec![0.0; geo.cout * geo.ho * geo.wo];
    for co in 0..geo.cout {
        let group = co / geo.cout_g;
        let bias = b.map_or(0.0, |b| b.data()[co]);
        let plane = &mut out[co * geo.ho * geo.wo..(co + 1) * geo.ho * geo.wo];
        plane.fill(bias);
        for ci_local in 0..geo.cin_g {
            let ci = group * geo.cin_g + ci_local;
            let xplane = &xd[ci * geo.hp * geo.wp..(ci + 1) * geo.hp * geo.wp];
            for ky in 0..geo.kh {
                for kx in 0..geo.kw {
                    let wv = wd[((co * geo.cin_g + ci_local) * geo.kh + ky) * geo.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..geo.ho {
                        let row = &xplane[(oy * s + ky) * geo.wp..];
                        let orow = &mut plane[oy * geo.wo..(oy + 1) * geo.wo];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            *o += wv * row[ox * s + kx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![geo.cout, geo.ho, geo.wo], out)
}

pub(crate) struct ConvGrads {
    pub x: Option<Tensor>,
    pub w: Option<Tensor>,
    pub b: Option<Tensor>,
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    spec: &ConvSpec,
    need: [bool; 3],
) -> Result<ConvGrads> {
    let geo = conv_geom(x, w, spec)?;
    let (_, h, wdim) = chw(x, "conv2d")?;
    let s = spec.stride;
    let gyd = gy.data();
    let wd = w.data();

    let gb = need[2].then(|| {
        let per = geo.ho * geo.wo;
        Tensor::from_fn(&[geo.cout], |co| gyd[co * per..(co + 1) * per].iter().sum())
    });

    let gw = if need[1] {
        let xp = pad(x, spec.padding, spec.pad_mode)?;
        let xd = xp.data();
        let mut gw = vec![0.0; w.len()];
        for co in 0..geo.cout {
            let group = co / geo.cout_g;
            let gplane = &gyd[co * geo.ho * geo.wo..(co + 1) * geo.ho * geo.wo];
            for ci_local in 0..geo.cin_g {
                let ci = group * geo.cin_g + ci_local;
                let xplane = &xd[ci * geo.hp * geo.wp..(ci + 1) * geo.hp * geo.wp];
                for ky in 0..geo.kh {
                    for kx in 0..geo.kw {
                        let mut acc = 0.0;
                        for oy in 0..geo.ho {
                            let row = &xplane[(oy * s + ky) * geo.wp..];
                            let grow = &gplane[oy * geo.wo..(oy + 1) * geo.wo];
                            for (ox, g) in grow.iter().enumerate() {
                                acc += g * row[ox * s + kx];
                            }
                        }
                        gw[((co * geo.cin_g + ci_local) * geo.kh + ky) * geo.kw + kx] = acc;
                    }
                }
            }
        }
        Some(Tensor::new(w.shape().to_vec(), gw)?)
    } else {
        None
    };

    let gx = if need[0] {
        let mut gxp = vec![0.0; geo.cin * geo.hp * geo.wp];
        for co in 0..geo.cout {
            let group = co / geo.cout_g;
            let gplane = &gyd[co * geo.ho * geo.wo..(co + 1) * geo.ho * geo.wo];
            for ci_local in 0..geo.cin_g {
                let ci = group * geo.cin_g + ci_local;
                let xplane = &mut gxp[ci * geo.hp * geo.wp..(ci + 1) * geo.hp * geo.wp];
                for ky in 0..geo.kh {
                    for kx in 0..geo.kw {
                        let wv = wd[((co * geo.cin_g + ci_local) * geo.kh + ky) * geo.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..geo.ho {
                            let base = (oy * s + ky) * geo.wp + kx;
                            let grow = &gplane[oy * geo.wo..(oy + 1) * geo.wo];
                            for (ox, g) in grow.iter().enumerate() {
                                xplane[base + ox * s] += wv * g;
                            }
                        }
                    }
                }
            }
        }
        let gxp = Tensor::new(vec![geo.cin, geo.hp, geo.wp], gxp)?;
        Some(unpad(&gxp, h, wdim, spec.padding, spec.pad_mode)?)
    } else {
        None
    };

    Ok(ConvGrads {
        x: gx,
        w: gw,
        b: gb,
    })
}

pub(crate) fn sobel_weight(channels: usize, axis: SobelAxis) -> Tensor {
    const H: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    const V: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let k = match axis {
        SobelAxis::Horizontal => H,
        SobelAxis::Vertical => V,
    };
    Tensor::from_fn(&[channels, 1, 3, 3], |i| k[i % 9])
}

pub(crate) fn sobel_spec(channels: usize) -> ConvSpec {
    ConvSpec::same(3).depthwise(channels)
}

fn pool_geom(x: &Tensor, kernel: usize, stride: usize, op: &'static str) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = chw(x, op)?;
    if kernel == 0 || stride == 0 || kernel > h || kernel > w {
        return Err(shape_err(
            op,
            format!("kernel {kernel} stride {stride} on {h}x{w}"),
        ));
    }
    Ok((c, h, w, (h - kernel) / stride + 1, (w - kernel) / stride + 1))
}

/// Returns the pooled map and, per output, the flat index of the selected input.
pub(crate) fn max_pool(x: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w, ho, wo) = pool_geom(x, kernel, stride, "max_pool2d")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let i = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if xd[i] > best {
                            best = xd[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::new(vec![c, ho, wo], out)?, arg))
}

pub(crate) fn avg_pool(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w, ho, wo) = pool_geom(x, kernel, stride, "avg_pool2d")?;
    let xd = x.data();
    let norm = 1.0 / (kernel * kernel) as f64;
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        acc += xd[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                out.push(acc * norm);
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

pub(crate) fn avg_pool_backward(x_shape: &[usize], gy: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let [c, h, w] = *x_shape else {
        return Err(shape_err("avg_pool2d", "bad input shape"));
    };
    let (_, ho, wo) = chw(gy, "avg_pool2d")?;
    let norm = 1.0 / (kernel * kernel) as f64;
    let gyd = gy.data();
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = gyd[(ch * ho + oy) * wo + ox] * norm;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        gx[(ch * h + oy * stride + ky) * w + ox * stride + kx] += g;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], gx)
}

/// Source taps (index pairs and weights) for one axis of a bilinear resize.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn resize(x: &Tensor, ho: usize, wo: usize) -> Result<Tensor> {
    let (c, h, w) = chw(x, "resize")?;
    if ho == 0 || wo == 0 {
        return Err(shape_err("resize", "zero target size"));
    }
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

pub(crate) fn resize_backward(x_shape: &[usize], gy: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *x_shape else {
        return Err(shape_err("resize", "bad input shape"));
    };
    let (_, ho, wo) = chw(gy, "resize")?;
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let gyd = gy.data();
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = gyd[(ch * ho + oy) * wo + ox];
                plane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += g * (1.0 - fy) * fx;
                plane[y1 * w + x0] += g * fy * (1.0 - fx);
                plane[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    Tensor::new(vec![c, h, w], gx)
}

pub(crate) fn crop_offsets(h: usize, w: usize, ch: usize, cw: usize) -> Result<(usize, usize)> {
    if ch == 0 || cw == 0 || ch > h || cw > w {
        return Err(shape_err(
            "center_crop",
            format!("cannot crop {ch}x{cw} from {h}x{w}"),
        ));
    }
    Ok(((h - ch) / 2, (w - cw) / 2))
}

pub(crate) fn center_crop(x: &Tensor, ch: usize, cw: usize) -> Result<Tensor> {
    let (c, h, w) = chw(x, "center_crop")?;
    let (oy, ox) = crop_offsets(h, w, ch, cw)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ch * cw);
    for k in 0..c {
        for y in 0..ch {
            let start = (k * h + oy + y) * w + ox;
            out.extend_from_slice(&xd[start..start + cw]);
        }
    }
    Tensor::new(vec![c, ch, cw], out)
}

pub(crate) fn center_crop_backward(x_shape: &[usize], gy: &Tensor) -> Result<Tensor> {
    let [c, h, w] = *x_shape else {
        return Err(shape_err("center_crop", "bad input shape"));
    };
    let (_, ch, cw) = chw(gy, "center_crop")?;
    let (oy, ox) = crop_offsets(h, w, ch, cw)?;
    let gyd = gy.data();
    let mut gx = vec![0.0; c * h * w];
    for k in 0..c {
        for y in 0..ch {
            let dst = (k * h + oy + y) * w + ox;
            let src = (k * ch + y) * cw;
            gx[dst..dst + cw].copy_from_slice(&gyd[src..src + cw]);
        }
    }
    Tensor::new(vec![c, h, w], gx)
}

pub(crate) fn upsample(x: &Tensor, f: usize) -> Result<Tensor> {
    let (c, h, w) = chw(x, "upsample")?;
    if f == 0 {
        return Err(shape_err("upsample", "zero factor"));
    }
    let (ho, wo) = (h * f, w * f);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for k in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                out.push(xd[(k * h + y / f) * w + xx / f]);
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

pub(crate) fn upsample_backward(x_shape: &[usize], gy: &Tensor, f: usize) -> Result<Tensor> {
    let [c, h, w] = *x_shape else {
        return Err(shape_err("upsample", "bad input shape"));
    };
    let (ho, wo) = (h * f, w * f);
    let gyd = gy.data();
    let mut gx = vec![0.0; c * h * w];
    for k in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                gx[(k * h + y / f) * w + xx / f] += gyd[(k * ho + y) * wo + xx];
            }
        }
    }
    Tensor::new(vec![c, h, w], gx)
}
