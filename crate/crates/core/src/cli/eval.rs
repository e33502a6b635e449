//! Greedy evaluation episodes and the metrics report.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{argmax, Encoder, QNetwork};
use crate::env::{canonical_start, Action, EnvConfig, Environment, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::geom::{plane_metrics, tangent_to_plane, TangentPoint};
use crate::imaging::{ncc, ssim, Image};
use crate::imitation::run_oracle;
use crate::volume::Volume;

#[derive(Clone, Debug)]
pub enum Policy {
    /// Greedy actions of a trained network.
    Agent { net: QNetwork, encoder: Encoder },
    /// Uniformly random actions; volume `i` uses seed `seed + i`.
    Random { seed: u64 },
    /// Geometric oracle with its stall-driven step schedule.
    Oracle,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Agent { .. } => "agent",
            Policy::Random { .. } => "random",
            Policy::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub volume: String,
    pub ang_deg: f64,
    pub dis_mm: f64,
    pub ssim: f64,
    pub ncc: f64,
    pub steps: usize,
}

/// Final tangent point and number of moves of one episode.
pub fn run_episode(env: &Environment, policy: &Policy, start: TangentPoint, index: usize) -> Result<(TangentPoint, usize)> {
    match policy {
        Policy::Oracle => {
            let enc = Encoder {
                downsample: 1,
                pose_input: false,
            };
            let d = run_oracle(env, &enc, start)?;
            Ok((*d.path.last().expect("path holds the start"), d.len()))
        }
        Policy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
            let mut state = env.reset(start)?;
            while !state.done {
                let a = Action::from_index(rng.gen_range(0..NUM_ACTIONS)).expect("valid index");
                state = env.step(&state, a)?.state;
            }
            Ok((state.tangent, state.step_index))
        }
        Policy::Agent { net, encoder } => {
            let mut state = env.reset(start)?;
            let mut obs = encoder.encode(&state)?;
            while !state.done {
                let q = net.forward(&obs.to_input())?.q;
                let a = Action::from_index(argmax(&q)).expect("valid index");
                state = env.step(&state, a)?.state;
                obs = encoder.advance(&obs, &state)?;
            }
            Ok((state.tangent, state.step_index))
        }
    }
}

fn similarity(a: &Image, b: &Image, f: fn(&Image, &Image) -> Result<f64>) -> Result<f64> {
    match f(a, b) {
        Err(Error::ZeroVariance) => Ok(0.0),
        r => r,
    }
}

/// Scores the final plane of one episode from the canonical start.
pub fn evaluate_volume(name: &str, vol: &Volume, env_cfg: &EnvConfig, policy: &Policy, index: usize) -> Result<EvalRow> {
    let env = Environment::new(vol, env_cfg.clone())?;
    let (end, steps) = run_episode(&env, policy, canonical_start(vol.spacing()), index)?;
    let m = plane_metrics(&tangent_to_plane(&end), &tangent_to_plane(&env.target()));
    let frame = env.observe(&end);
    Ok(EvalRow {
        volume: name.to_string(),
        ang_deg: m.ang_deg,
        dis_mm: m.dis_mm,
        ssim: similarity(&frame, env.gt_frame(), ssim)?,
        ncc: similarity(&frame, env.gt_frame(), ncc)?,
        steps,
    })
}

/// Evaluates every volume in parallel; rows keep the input order.
pub fn evaluate(vols: &[(String, Volume)], env_cfg: &EnvConfig, policy: &Policy) -> Result<EvalReport> {
    if vols.is_empty() {
        return Err(Error::config("nothing to evaluate: empty dataset"));
    }
    let rows = vols
        .par_iter()
        .enumerate()
        .map(|(i, (name, v))| evaluate_volume(name, v, env_cfg, policy, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(policy.name(), rows))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> MeanStd {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub ang_deg: MeanStd,
    pub dis_mm: MeanStd,
    pub ssim: MeanStd,
    pub ncc: MeanStd,
    pub steps: MeanStd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub policy: String,
    pub rows: Vec<EvalRow>,
    pub aggregate: Aggregate,
}

pub const CSV_HEADER: &str = "volume,ang_deg,dis_mm,ssim,ncc,steps";

impl EvalReport {
    pub fn new(policy: &str, rows: Vec<EvalRow>) -> Self {
        let aggregate = EvalReport::aggregate_of(&rows);
        EvalReport {
            policy: policy.to_string(),
            rows,
            aggregate,
        }
    }

    fn aggregate_of(rows: &[EvalRow]) -> Aggregate {
        Aggregate {
            ang_deg: mean_std(rows.iter().map(|r| r.ang_deg)),
            dis_mm: mean_std(rows.iter().map(|r| r.dis_mm)),
            ssim: mean_std(rows.iter().map(|r| r.ssim)),
            ncc: mean_std(rows.iter().map(|r| r.ncc)),
            steps: mean_std(rows.iter().map(|r| r.steps as f64)),
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "policy: {}", self.policy);
        let _ = writeln!(
            s,
            "{:<18} {:>9} {:>9} {:>8} {:>8} {:>6}",
            "volume", "ang(deg)", "dis(mm)", "ssim", "ncc", "steps"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>9.3} {:>9.3} {:>8.4} {:>8.4} {:>6}",
                r.volume, r.ang_deg, r.dis_mm, r.ssim, r.ncc, r.steps
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            s,
            "{:<18} {:>9} {:>9} {:>8} {:>8} {:>6}",
            "mean+-std",
            format!("{:.2}+-{:.2}", a.ang_deg.mean, a.ang_deg.std),
            format!("{:.2}+-{:.2}", a.dis_mm.mean, a.dis_mm.std),
            format!("{:.3}+-{:.3}", a.ssim.mean, a.ssim.std),
            format!("{:.3}+-{:.3}", a.ncc.mean, a.ncc.std),
            format!("{:.1}", a.steps.mean),
        );
        s
    }

    /// Comma-separated rows followed by `mean` and `std` rows, all at full
    /// precision.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?},{:?},{:?},{}", r.volume, r.ang_deg, r.dis_mm, r.ssim, r.ncc, r.steps);
        }
        let a = &self.aggregate;
        for (label, pick) in [("mean", (|m: &MeanStd| m.mean) as fn(&MeanStd) -> f64), ("std", |m| m.std)] {
            let _ = writeln!(
                s,
                "{label},{:?},{:?},{:?},{:?},{:?}",
                pick(&a.ang_deg),
                pick(&a.dis_mm),
                pick(&a.ssim),
                pick(&a.ncc),
                pick(&a.steps)
            );
        }
        s
    }

    /// Parses [`to_csv`](Self::to_csv) output and checks that the stored
    /// aggregates equal those recomputed from the rows.
    pub fn from_csv(policy: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::format("unexpected report header"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format(format!("bad number {s:?}")));
        let mut rows = Vec::new();
        let mut stored: Vec<[f64; 5]> = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::format(format!("bad report line {line:?}")));
            }
            let vals = [num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?];
            match f[0] {
                "mean" | "std" => stored.push(vals),
                name => {
                    if !stored.is_empty() {
                        return Err(Error::format("row after aggregates"));
                    }
                    rows.push(EvalRow {
                        volume: name.to_string(),
                        ang_deg: vals[0],
                        dis_mm: vals[1],
                        ssim: vals[2],
                        ncc: vals[3],
                        steps: f[5].parse().map_err(|_| Error::format("bad step count"))?,
                    });
                }
            }
        }
        let report = EvalReport::new(policy, rows);
        let a = &report.aggregate;
        let want = [
            [a.ang_deg.mean, a.dis_mm.mean, a.ssim.mean, a.ncc.mean, a.steps.mean],
            [a.ang_deg.std, a.dis_mm.std, a.ssim.std, a.ncc.std, a.steps.std],
        ];
        if stored.len() != 2 || stored[0] != want[0] || stored[1] != want[1] {
            return Err(Error::format("report aggregates do not match its rows"));
        }
        Ok(report)
    }

    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.txt")), self.table())?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{generate_phantom, PhantomConfig};

    fn row(name: &str, ang: f64, steps: usize) -> EvalRow {
        EvalRow {
            volume: name.into(),
            ang_deg: ang,
            dis_mm: ang / 10.0,
            ssim: 0.5,
            ncc: 0.25 + ang / 100.0,
            steps,
        }
    }

    #[test]
    fn aggregates_are_exact_and_csv_round_trips() {
        let r = EvalReport::new("x", vec![row("a", 1.0, 60), row("b", 3.0, 40), row("c", 0.1, 17)]);
        assert!((r.aggregate.ang_deg.mean - 4.1 / 3.0).abs() < 1e-15);
        let back = EvalReport::from_csv("x", &r.to_csv()).unwrap();
        assert_eq!(back, r);
        let tampered = r.to_csv().replace("b,3.0", "b,3.5");
        assert!(matches!(EvalReport::from_csv("x", &tampered), Err(Error::Format(_))));
        assert!(r.table().contains("mean+-std"));
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        assert!(matches!(evaluate(&[], &EnvConfig::default(), &Policy::Oracle), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_lands_on_target() {
        let vols: Vec<(String, Volume)> = (0..2)
            .map(|i| {
                let v = generate_phantom(&PhantomConfig {
                    seed: 40 + i,
                    dims: [40, 40, 40],
                    ..PhantomConfig::default()
                })
                .unwrap();
                (format!("v{i}"), v)
            })
            .collect();
        let cfg = EnvConfig {
            frame_extent: 64,
            ..EnvConfig::default()
        };
        let rep = evaluate(&vols, &cfg, &Policy::Oracle).unwrap();
        for r in &rep.rows {
            assert!(r.ang_deg < 0.5, "{r:?}");
            assert!(r.dis_mm <= 3f64.sqrt() * 0.01, "{r:?}");
        }
        let rnd = evaluate(&vols, &cfg, &Policy::Random { seed: 1 }).unwrap();
        assert!(rnd.rows.iter().all(|r| r.steps == 60));
        assert_eq!(rnd, evaluate(&vols, &cfg, &Policy::Random { seed: 1 }).unwrap());
    }
}
