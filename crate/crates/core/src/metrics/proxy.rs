//! Full-reference proxies: MSE, PSNR and SSIM on `[0, 1]` images.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Result;
use crate::image::Image;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyScores {
    pub mse: f64,
    /// Decibels at peak 1.0; infinite for identical images.
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub psnr: f64,
    pub ssim: f64,
}

fn ser_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) if s == "inf" => Ok(f64::INFINITY),
        Num::S(s) => Err(serde::de::Error::custom(format!("bad psnr `{s}`"))),
    }
}

pub fn mse(reference: &Image, attacked: &Image) -> Result<f64> {
    reference.check_same_shape(attacked)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(attacked.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(reference: &Image, attacked: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(reference, attacked)?))
}

/// Normalized Gaussian window; shrinks to the largest odd size that fits.
fn window(h: usize, w: usize) -> (usize, Vec<f64>) {
    let mut k = SSIM_WINDOW.min(h).min(w);
    if k % 2 == 0 {
        k -= 1;
    }
    let r = (k / 2) as f64;
    let one: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let mut win = Vec::with_capacity(k * k);
    for a in &one {
        for b in &one {
            win.push(a * b);
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    (k, win)
}

/// Mean SSIM over valid windows of the BT.601 luma planes.
pub fn ssim(reference: &Image, attacked: &Image) -> Result<f64> {
    reference.check_same_shape(attacked)?;
    let (h, w) = (reference.height(), reference.width());
    let (x, y) = (reference.luma(), attacked.luma());
    let (k, win) = window(h, w);
    let c1 = (K1 * 1.0f64).powi(2);
    let c2 = (K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let wv = win[dy * k + dx];
                    let i = (oy + dy) * w + ox + dx;
                    mx += wv * x[i];
                    my += wv * y[i];
                    sxx += wv * x[i] * x[i];
                    syy += wv * y[i] * y[i];
                    sxy += wv * x[i] * y[i];
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn proxy_scores(reference: &Image, attacked: &Image) -> Result<ProxyScores> {
    let m = mse(reference, attacked)?;
    Ok(ProxyScores {
        mse: m,
        psnr: psnr_from_mse(m),
        ssim: ssim(reference, attacked)?,
    })
}
