//! CSV tables and the binary snapshot format.
//!
//! Floating-point values are written with 17 significant digits so that
//! text round-trips to the same `f64`.
//!
//! Snapshot files are little-endian: the magic `STFE1`, a `u32` version, a
//! `u32` cell count `N` and the `f64` domain length, followed by records of
//! one `f64` time and `N` `f64` nodal values.

use std::io::{Read, Write};

use crate::diagnostics::Trajectory;
use crate::error::{Result, StfeError};
use crate::grid::Field;
use crate::montecarlo::{EnsembleStats, SweepReport};

pub const TRAJECTORY_HEADER: &str = "t,mass,e1,e2,g_alpha,energy,min_u,diss_pressure,diss_quartic,diss_hessian,diss_potential,stopped_flag,rejections";

pub const SNAPSHOT_MAGIC: &[u8; 5] = b"STFE1";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Shortest exact text form: 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trajectory_csv<W: Write>(mut w: W, tr: &Trajectory) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in &tr.records {
        let f = &r.functionals;
        let d = &r.dissipation;
        let vals = [
            r.t, f.mass, f.e1, f.e2, f.g_alpha, f.energy, f.min_u, d.pressure, d.quartic, d.hessian, d.potential,
        ];
        let cols: Vec<String> = vals.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{},{},{}", cols.join(","), u8::from(r.stopped), r.rejections)?;
    }
    Ok(())
}

/// Metadata as `key,value` lines.
pub fn write_trajectory_meta<W: Write>(mut w: W, tr: &Trajectory) -> Result<()> {
    let m = &tr.metadata;
    writeln!(w, "key,value")?;
    writeln!(w, "seed,{}", m.seed)?;
    writeln!(w, "status,{}", tr.status.as_str())?;
    let stopped = tr.stopped_at.map(fmt_f64).unwrap_or_default();
    writeln!(w, "stopped_at,{stopped}")?;
    writeln!(w, "stop_detection,{}", m.stop_detection)?;
    writeln!(w, "scheme,{}", m.scheme)?;
    for (k, v) in [
        ("eps", m.params.eps),
        ("p", m.params.p),
        ("theta", m.params.theta),
        ("alpha", m.params.alpha),
        ("c_strat", m.params.c_strat),
        ("length", m.length),
        ("dt_init", m.dt_init),
        ("sigma", m.sigma),
    ] {
        writeln!(w, "{k},{}", fmt_f64(v))?;
    }
    writeln!(w, "n_cells,{}", m.n_cells)?;
    writeln!(w, "k_max,{}", m.k_max)?;
    writeln!(w, "sparse_cadence,{}", tr.sparse_cadence)?;
    if let Some(f) = &tr.failure {
        writeln!(w, "failure,{f}")?;
    }
    // weak-form integrals run over the whole domain; a small value here marks
    // runs where that differs from integrating over the wet set only
    let min_u = tr.records.iter().map(|r| r.functionals.min_u).fold(f64::INFINITY, f64::min);
    writeln!(w, "min_u_over_records,{}", fmt_f64(min_u))?;
    Ok(())
}

pub const ENSEMBLE_HEADER: &str = "eps,q,statistic,estimate,se,n_used,n_failed,valid";
pub const MARTINGALE_HEADER: &str = "eps,phi,t,mean_m,se_m,mean_m2,mean_qv,ratio";

pub fn write_ensemble_csv<W: Write>(mut w: W, ensembles: &[EnsembleStats]) -> Result<()> {
    writeln!(w, "{ENSEMBLE_HEADER}")?;
    for e in ensembles {
        for r in &e.moments {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(r.eps),
                fmt_f64(r.q),
                r.statistic,
                fmt_f64(r.estimate),
                fmt_f64(r.se),
                e.n_used,
                e.n_failed,
                e.valid
            )?;
        }
    }
    Ok(())
}

pub fn write_martingale_csv<W: Write>(mut w: W, ensembles: &[EnsembleStats]) -> Result<()> {
    writeln!(w, "{MARTINGALE_HEADER}")?;
    for e in ensembles {
        for r in &e.martingale {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(e.eps),
                r.phi,
                fmt_f64(r.t),
                fmt_f64(r.mean_m),
                fmt_f64(r.se_m),
                fmt_f64(r.mean_m2),
                fmt_f64(r.mean_qv),
                fmt_f64(r.ratio)
            )?;
        }
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "eps,q,statistic,estimate,se";
pub const SPREAD_HEADER: &str = "statistic,q,max_over_min,flagged";

/// Moment rows per eps, followed by the eps-dependent extras `sup_e2`,
/// `initial_e2` and `initial_pi` (q = 1).
pub fn write_sweep_csv<W: Write>(mut w: W, report: &SweepReport) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for e in &report.ensembles {
        for r in &e.moments {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(r.eps),
                fmt_f64(r.q),
                r.statistic,
                fmt_f64(r.estimate),
                fmt_f64(r.se)
            )?;
        }
        let sup_e2: Vec<f64> = e.samples.iter().map(|s| s.sup_e2).collect();
        let se = crate::montecarlo::mean_se(&sup_e2).1;
        for (name, v, s) in [
            ("sup_e2", e.mean_sup_e2, se),
            ("initial_e2", e.initial_e2, 0.0),
            ("initial_pi", e.initial_pi, 0.0),
        ] {
            writeln!(w, "{},{},{name},{},{}", fmt_f64(e.eps), fmt_f64(1.0), fmt_f64(v), fmt_f64(s))?;
        }
    }
    Ok(())
}

pub fn write_spread_csv<W: Write>(mut w: W, report: &SweepReport) -> Result<()> {
    writeln!(w, "{SPREAD_HEADER}")?;
    for s in &report.spreads {
        writeln!(w, "{},{},{},{}", s.statistic, fmt_f64(s.q), fmt_f64(s.ratio), s.flagged)?;
    }
    Ok(())
}

pub fn write_snapshot_header<W: Write>(mut w: W, n_cells: usize, length: f64) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    let n = u32::try_from(n_cells).map_err(|_| StfeError::Snapshot("N does not fit in u32".into()))?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&length.to_le_bytes())?;
    Ok(())
}

pub fn write_snapshot_record<W: Write>(mut w: W, t: f64, u: &[f64]) -> Result<()> {
    w.write_all(&t.to_le_bytes())?;
    for v in u {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_snapshots<W: Write>(mut w: W, length: f64, snaps: &[(f64, Field)]) -> Result<()> {
    let n = snaps.first().map_or(0, |s| s.1.len());
    write_snapshot_header(&mut w, n, length)?;
    for (t, u) in snaps {
        if u.len() != n {
            return Err(StfeError::ShapeMismatch {
                expected: n,
                got: u.len(),
            });
        }
        write_snapshot_record(&mut w, *t, u)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub version: u32,
    pub length: f64,
    pub n_cells: usize,
    pub snapshots: Vec<(f64, Field)>,
}

pub fn read_snapshots<R: Read>(mut r: R) -> Result<SnapshotFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 21 || &bytes[..5] != SNAPSHOT_MAGIC {
        return Err(StfeError::Snapshot("missing STFE1 header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(5);
    if version != SNAPSHOT_VERSION {
        return Err(StfeError::Snapshot(format!("unsupported version {version}")));
    }
    let n = u32_at(9) as usize;
    let length = f64_at(13);
    let rec = 8 * (n + 1);
    let body = bytes.len() - 21;
    if n == 0 || body % rec != 0 {
        return Err(StfeError::Snapshot(format!(
            "body of {body} bytes is not a whole number of {rec}-byte records"
        )));
    }
    let snapshots = (0..body / rec)
        .map(|j| {
            let o = 21 + j * rec;
            let t = f64_at(o);
            let u = (0..n).map(|i| f64_at(o + 8 * (i + 1))).collect();
            (t, Field(u))
        })
        .collect();
    Ok(SnapshotFile {
        version,
        length,
        n_cells: n,
        snapshots,
    })
}
