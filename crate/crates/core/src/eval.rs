//! Per-horizon error reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::model::Forecaster;
use crate::tensor::Tensor3;
use crate::FRAME_MS;

/// Reported horizons in milliseconds.
pub const HORIZONS_MS: [u32; 4] = [80, 160, 320, 400];

/// 1-based frame index of a horizon.
pub fn horizon_frame(ms: u32) -> Result<usize> {
    if ms == 0 || !ms.is_multiple_of(FRAME_MS) {
        return Err(Error::invalid(format!(
            "horizon {ms} ms is not a positive multiple of {FRAME_MS} ms"
        )));
    }
    Ok((ms / FRAME_MS) as usize)
}

/// How the per-frame error vector across sensors is reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// `‖e‖₂ / √C`
    #[default]
    L2Scaled,
    /// `mean_c |e_c|`
    MeanAbsolute,
}

impl std::str::FromStr for Reduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2-scaled" => Ok(Reduction::L2Scaled),
            "mean-absolute" => Ok(Reduction::MeanAbsolute),
            _ => Err(Error::Config {
                field: "reduction",
                msg: format!("expected l2-scaled or mean-absolute, got `{s}`"),
            }),
        }
    }
}

impl Reduction {
    pub fn frame_error(self, err: &[f64]) -> f64 {
        let c = err.len() as f64;
        match self {
            Reduction::L2Scaled => (err.iter().map(|e| e * e).sum::<f64>() / c).sqrt(),
            Reduction::MeanAbsolute => err.iter().map(|e| e.abs()).sum::<f64>() / c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub action: String,
    pub episodes: usize,
    /// One entry per horizon of the report.
    pub errors: Vec<f64>,
    pub average: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub model: String,
    pub reduction: Reduction,
    pub horizons_ms: Vec<u32>,
    pub rows: Vec<ReportRow>,
    /// Column means over `rows`.
    pub overall: ReportRow,
}

impl ForecastReport {
    pub fn row(&self, action: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.action == action)
    }

    /// One line per action and horizon, then the average column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,action,horizon_ms,metric,count\n");
        for r in self.rows.iter().chain(std::iter::once(&self.overall)) {
            for (h, e) in self.horizons_ms.iter().zip(&r.errors) {
                writeln!(s, "{},{},{h},{e:?},{}", self.model, r.action, r.episodes).expect("write");
            }
            writeln!(s, "{},{},avg,{:?},{}", self.model, r.action, r.average, r.episodes)
                .expect("write");
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!("{:<18}", self.model);
        for h in &self.horizons_ms {
            write!(s, "{h:>9}").expect("write");
        }
        s.push_str("      Avg\n");
        for r in self.rows.iter().chain(std::iter::once(&self.overall)) {
            write!(s, "{:<18}", r.action).expect("write");
            for e in &r.errors {
                write!(s, "{e:>9.4}").expect("write");
            }
            writeln!(s, "{:>9.4}", r.average).expect("write");
        }
        s
    }
}

fn denormalized(t: &Tensor3, ep: &Episode, norm: Option<&Normalizer>) -> Result<Tensor3> {
    match norm {
        Some(n) => n.invert(t, ep.graph.ids()),
        None => Ok(t.clone()),
    }
}

/// Error at each requested horizon, averaged over episodes and query
/// instances, per action (sorted by name). Errors are computed after undoing
/// `norm`. Never mutates the forecaster.
pub fn evaluate(
    model: &dyn Forecaster,
    episodes: &[Episode],
    norm: Option<&Normalizer>,
    reduction: Reduction,
    horizons_ms: &[u32],
) -> Result<ForecastReport> {
    if horizons_ms.is_empty() {
        return Err(Error::invalid("no horizons requested"));
    }
    let frames: Vec<usize> = horizons_ms.iter().map(|&h| horizon_frame(h)).collect::<Result<_>>()?;
    // action -> (episode count, per-horizon sums, instance count)
    let mut acc: BTreeMap<String, (usize, Vec<f64>, usize)> = BTreeMap::new();
    for ep in episodes {
        let h = ep.horizon();
        if let Some(&f) = frames.iter().find(|&&f| f > h) {
            return Err(Error::invalid(format!(
                "horizon frame {f} is beyond the episode horizon {h}"
            )));
        }
        let pred = model.forecast_episode(ep)?;
        if pred.dims() != ep.query_y.dims() {
            return Err(Error::Shape {
                op: "evaluate",
                lhs: pred.dims(),
                rhs: ep.query_y.dims(),
            });
        }
        let pred = denormalized(&pred, ep, norm)?;
        let target = denormalized(&ep.query_y, ep, norm)?;
        let entry = acc
            .entry(ep.action.clone())
            .or_insert_with(|| (0, vec![0.0; frames.len()], 0));
        entry.0 += 1;
        let c = ep.sensors();
        let mut err = vec![0.0; c];
        for i in 0..ep.query_len() {
            for (k, &f) in frames.iter().enumerate() {
                for (s, e) in err.iter_mut().enumerate() {
                    *e = pred.get(i, f - 1, s) - target.get(i, f - 1, s);
                }
                entry.1[k] += reduction.frame_error(&err);
            }
        }
        entry.2 += ep.query_len();
    }
    if acc.is_empty() {
        return Err(Error::invalid("no episodes to evaluate"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rows: Vec<ReportRow> = acc
        .into_iter()
        .map(|(action, (n, sums, inst))| {
            let errors: Vec<f64> = sums.iter().map(|s| s / inst as f64).collect();
            ReportRow {
                action,
                episodes: n,
                average: mean(&errors),
                errors,
            }
        })
        .collect();
    let errors: Vec<f64> = (0..frames.len())
        .map(|k| rows.iter().map(|r| r.errors[k]).sum::<f64>() / rows.len() as f64)
        .collect();
    let overall = ReportRow {
        action: "average".into(),
        episodes: rows.iter().map(|r| r.episodes).sum(),
        average: mean(&errors),
        errors,
    };
    Ok(ForecastReport {
        model: model.name(),
        reduction,
        horizons_ms: horizons_ms.to_vec(),
        rows,
        overall,
    })
}

/// Mean over episodes of the query MSE, in the units the episodes are stored in.
pub fn query_mse(model: &dyn Forecaster, episodes: &[Episode]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::invalid("no episodes to evaluate"));
    }
    let mut total = 0.0;
    for ep in episodes {
        total += episode_mse(model, ep)?;
    }
    Ok(total / episodes.len() as f64)
}

fn episode_mse(model: &dyn Forecaster, ep: &Episode) -> Result<f64> {
    let pred = model.forecast_episode(ep)?;
    if pred.dims() != ep.query_y.dims() {
        return Err(Error::Shape {
            op: "query_mse",
            lhs: pred.dims(),
            rhs: ep.query_y.dims(),
        });
    }
    let sq: f64 = pred
        .data()
        .iter()
        .zip(ep.query_y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / pred.len() as f64)
}

/// Observed, target and predicted series of every query instance and
/// sensor as CSV, in original units.
pub fn forecast_traces(
    model: &dyn Forecaster,
    ep: &Episode,
    norm: Option<&Normalizer>,
) -> Result<String> {
    let pred = denormalized(&model.forecast_episode(ep)?, ep, norm)?;
    let x = denormalized(&ep.query_x, ep, norm)?;
    let y = denormalized(&ep.query_y, ep, norm)?;
    let t = ep.input_len();
    let mut s = String::from("instance,sensor,label,frame,kind,value\n");
    for i in 0..ep.query_len() {
        for (k, (&id, label)) in ep.graph.ids().iter().zip(ep.graph.labels()).enumerate() {
            for f in 0..t {
                writeln!(s, "{i},{id},{label},{f},observed,{:?}", x.get(i, f, k)).expect("write");
            }
            for f in 0..ep.horizon() {
                writeln!(s, "{i},{id},{label},{},target,{:?}", t + f, y.get(i, f, k))
                    .expect("write");
                writeln!(s, "{i},{id},{label},{},predicted,{:?}", t + f, pred.get(i, f, k))
                    .expect("write");
            }
        }
    }
    Ok(s)
}

/// Normalised error of models trained under different subgraph size caps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapAblation {
    pub train_caps: Vec<usize>,
    pub test_caps: Vec<usize>,
    /// `matrix[a][b]`: model trained at `train_caps[a]` on tasks capped at `test_caps[b]`.
    pub matrix: Vec<Vec<f64>>,
}

/// Query MSE of every model on every test set. For each action the MSE is
/// divided by that action's mean over the whole grid; the normalised values
/// are then averaged over actions.
pub fn size_cap_ablation(
    models: &[(usize, &dyn Forecaster)],
    test_sets: &[(usize, Vec<Episode>)],
) -> Result<CapAblation> {
    if models.is_empty() || test_sets.is_empty() {
        return Err(Error::invalid("cap ablation needs models and test sets"));
    }
    // per[a][b][action] = mean MSE
    let mut per: Vec<Vec<BTreeMap<String, f64>>> = Vec::new();
    for (_, model) in models {
        let mut row = Vec::new();
        for (_, episodes) in test_sets {
            let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for ep in episodes {
                let e = groups.entry(ep.action.clone()).or_default();
                e.0 += episode_mse(*model, ep)?;
                e.1 += 1;
            }
            row.push(groups.into_iter().map(|(a, (s, n))| (a, s / n as f64)).collect());
        }
        per.push(row);
    }
    let actions: Vec<String> = per[0][0].keys().cloned().collect();
    if actions.is_empty() {
        return Err(Error::invalid("test sets are empty"));
    }
    let cells = (models.len() * test_sets.len()) as f64;
    let mut scale = BTreeMap::new();
    for a in &actions {
        let mut total = 0.0;
        for row in &per {
            for cell in row {
                total += cell
                    .get(a)
                    .ok_or_else(|| Error::invalid(format!("action `{a}` missing from a test set")))?;
            }
        }
        scale.insert(a.clone(), total / cells);
    }
    let matrix = per
        .iter()
        .map(|row| {
            row.iter()
                .map(|cell| {
                    actions.iter().map(|a| cell[a] / scale[a]).sum::<f64>() / actions.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(CapAblation {
        train_caps: models.iter().map(|(c, _)| *c).collect(),
        test_caps: test_sets.iter().map(|(c, _)| *c).collect(),
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::MotionGraph;
    use crate::model::ZeroVelocity;
    use crate::tensor::Dims;

    struct Fixed(Tensor3);

    impl Forecaster for Fixed {
        fn name(&self) -> String {
            "fixed".into()
        }
        fn forecast_episode(&self, _: &Episode) -> Result<Tensor3> {
            Ok(self.0.clone())
        }
    }

    fn constant_episode(c: usize, h: usize) -> Episode {
        let g = MotionGraph::path(c);
        let x = Tensor3::filled(Dims::new(3, 5, c), 0.7);
        let y = Tensor3::filled(Dims::new(3, h, c), 0.7);
        Episode::new("walking", g, x.clone(), y.clone(), x, y).unwrap()
    }

    #[test]
    fn horizon_frames() {
        let frames: Vec<usize> = HORIZONS_MS.iter().map(|&h| horizon_frame(h).unwrap()).collect();
        assert_eq!(frames, vec![2, 4, 8, 10]);
        assert!(horizon_frame(100).is_err());
    }

    #[test]
    fn zero_velocity_on_constant_signal_is_exact() {
        let ep = constant_episode(4, 10);
        for red in [Reduction::L2Scaled, Reduction::MeanAbsolute] {
            let r = evaluate(&ZeroVelocity, std::slice::from_ref(&ep), None, red, &HORIZONS_MS).unwrap();
            assert!(r.rows[0].errors.iter().all(|&e| e == 0.0));
            assert_eq!(r.overall.average, 0.0);
        }
    }

    #[test]
    fn horizon_beyond_episode_rejected() {
        let ep = constant_episode(2, 4);
        assert!(evaluate(&ZeroVelocity, &[ep], None, Reduction::L2Scaled, &HORIZONS_MS).is_err());
    }

    #[test]
    fn average_column_is_mean_of_horizons() {
        let ep = constant_episode(3, 10);
        let pred = Tensor3::from_fn(Dims::new(3, 10, 3), |i, t, c| 0.7 + (i + t * c) as f64 * 0.01);
        let r = evaluate(&Fixed(pred), &[ep], None, Reduction::L2Scaled, &HORIZONS_MS).unwrap();
        let row = &r.rows[0];
        let mean = row.errors.iter().sum::<f64>() / 4.0;
        assert!((row.average - mean).abs() <= 1e-12);
        assert_eq!(r.to_csv().lines().count(), 1 + 2 * 5);
    }

    #[test]
    fn cap_ablation_grid_shape() {
        let ep = constant_episode(3, 2);
        let pred = Tensor3::filled(Dims::new(3, 2, 3), 1.0);
        let (a, b) = (Fixed(pred.clone()), Fixed(pred.map(|v| v * 2.0)));
        let tests = vec![(5, vec![ep.clone()]), (20, vec![ep.clone()]), (35, vec![ep])];
        let r = size_cap_ablation(&[(5, &a), (20, &b), (35, &a)], &tests).unwrap();
        assert_eq!(r.matrix.len(), 3);
        assert!(r.matrix.iter().all(|row| row.len() == 3));
        // normalised values average to one
        let total: f64 = r.matrix.iter().flatten().sum();
        assert!((total / 9.0 - 1.0).abs() < 1e-12);
    }
}
