#![allow(dead_code)]

use std::f64::consts::PI;

use stfe::{Field, Grid, ModelParams};

pub fn params(eps: f64) -> ModelParams {
    ModelParams::new(eps, 3.0, 0.2, -0.25, 0.0).unwrap()
}

pub fn cos2_bump(g: &Grid, h0: f64, xc: f64, r: f64, floor: f64) -> Field {
    g.sample(|x| {
        let d = x - xc;
        let core = if d.abs() <= r { h0 * (PI * d / (2.0 * r)).cos().powi(2) } else { 0.0 };
        core + floor
    })
}

pub fn cap(g: &Grid, h0: f64, xc: f64, r: f64, floor: f64) -> Field {
    g.sample(|x| h0 * (1.0 - ((x - xc) / r).powi(2)).max(0.0) + floor)
}
