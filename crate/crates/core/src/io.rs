//! Signal serialization: CSV (`t,re,im`) and a self-describing JSON envelope
//! `{"grid": {"t_start", "dt", "n"}, "samples": [[re, im], ...]}`.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KkError, Result};
use crate::grid::{ComplexSignal, TimeGrid};

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    grid: TimeGrid,
    samples: Vec<[f64; 2]>,
}

pub fn signal_to_json(sig: &ComplexSignal) -> String {
    let env = Envelope {
        grid: *sig.grid(),
        samples: sig.samples().iter().map(|z| [z.re, z.im]).collect(),
    };
    serde_json::to_string(&env).expect("envelope serializes")
}

pub fn signal_from_json(text: &str) -> Result<ComplexSignal> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| KkError::Parse(e.to_string()))?;
    let grid = TimeGrid::new(env.grid.t_start, env.grid.dt, env.grid.n_samples)?;
    ComplexSignal::new(
        grid,
        env.samples.iter().map(|&[re, im]| Complex64::new(re, im)).collect(),
    )
}

pub fn write_signal_csv<W: Write>(sig: &ComplexSignal, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| KkError::Parse(e.to_string());
    out.write_record(["t", "re", "im"]).map_err(err)?;
    for (k, z) in sig.samples().iter().enumerate() {
        out.serialize((sig.grid().time(k), z.re, z.im)).map_err(err)?;
    }
    out.flush().map_err(|e| KkError::Parse(e.to_string()))
}

/// Reads `t,re,im` rows. The grid is inferred from the first two time stamps
/// and every later stamp must sit on it.
pub fn read_signal_csv<R: Read>(r: R) -> Result<ComplexSignal> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec.map_err(|e: csv::Error| KkError::Parse(e.to_string()))?);
    }
    if rows.len() < 2 {
        return Err(KkError::Parse("need at least two rows".into()));
    }
    let dt = rows[1].0 - rows[0].0;
    let grid = TimeGrid::new(rows[0].0, dt, rows.len())?;
    for (k, row) in rows.iter().enumerate() {
        if (row.0 - grid.time(k)).abs() > 1e-9 * dt.abs().max(1e-300) + 1e-12 * row.0.abs() {
            return Err(KkError::Parse(format!(
                "row {k}: time {} is off the uniform grid",
                row.0
            )));
        }
    }
    ComplexSignal::new(grid, rows.iter().map(|r| Complex64::new(r.1, r.2)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_and_csv_round_trip(vals in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..64),
                                   t0 in -10.0f64..10.0, dt in 1e-3f64..1.0) {
            let grid = TimeGrid::new(t0, dt, vals.len()).unwrap();
            let sig = ComplexSignal::new(grid, vals.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap();
            let back = signal_from_json(&signal_to_json(&sig)).unwrap();
            prop_assert_eq!(&back, &sig);

            let mut buf = Vec::new();
            write_signal_csv(&sig, &mut buf).unwrap();
            let back = read_signal_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.samples(), sig.samples());
            prop_assert!((back.grid().dt - dt).abs() < 1e-9 * dt);
        }
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(signal_from_json("{\"grid\": 3}").is_err());
        assert!(read_signal_csv("t,re,im\n0,1,2\n".as_bytes()).is_err());
        assert!(read_signal_csv("t,re,im\n0,1,2\n1,1,2\n5,0,0\n".as_bytes()).is_err());
    }
}
