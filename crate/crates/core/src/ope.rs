//! Off-policy evaluation diagnostics: cumulative inverse-probability
//! products and importance ratios against a target policy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::NumericEpisodeSet;
use crate::error::{Error, Result};
use crate::models::PolicyModel;
use crate::staterep::{assemble_state, StateMatrix, StateSpec};
use crate::svg::LineChart;
use crate::util::{fmt6, mean, median};

/// Behavior probabilities are floored here before inversion.
pub const PROB_FLOOR: f64 = 1e-6;
/// Rows where the behavior model gives the observed action less than this are overlap suspects.
pub const OVERLAP_THRESHOLD: f64 = 1e-3;

/// Cumulative products `Π_{t≤t'} 1/p̂(a_t|s_t)` for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSeries {
    pub patient_id: String,
    pub products: Vec<f64>,
    /// Stages (1-based) whose probability hit the floor.
    pub floored_stages: Vec<usize>,
}

/// Products of floored inverse probabilities of the observed actions.
pub fn cumulative_inverse_products(p_observed: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut acc = 1.0;
    let mut floored = Vec::new();
    let products = p_observed
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if !(p >= PROB_FLOOR) {
                floored.push(i + 1);
            }
            // probabilities above one only arise from rounding; never shrink the product
            acc *= 1.0 / p.clamp(PROB_FLOOR, 1.0);
            acc
        })
        .collect();
    (products, floored)
}

/// Products per patient from row probabilities aligned with `m`.
pub fn products_from_probs(m: &StateMatrix, probs: &[Vec<f64>]) -> Vec<ProductSeries> {
    m.rows_by_patient()
        .into_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(p, rows)| {
            let observed: Vec<f64> = rows.iter().map(|&r| probs[r][m.labels[r]]).collect();
            let (products, floored_stages) = cumulative_inverse_products(&observed);
            ProductSeries { patient_id: m.patient_ids[p].clone(), products, floored_stages }
        })
        .collect()
}

pub fn inverse_probability_products(
    episodes: &NumericEpisodeSet,
    model: &PolicyModel,
    spec: &StateSpec,
) -> Result<Vec<ProductSeries>> {
    let m = assemble_state(episodes, spec)?;
    let probs = model.predict_matrix(&m)?;
    Ok(products_from_probs(&m, &probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductCurve {
    pub stages: Vec<usize>,
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    /// Patients still active at each stage.
    pub counts: Vec<usize>,
    /// Floored probabilities encountered at each stage.
    pub floored_events: Vec<usize>,
}

/// Per-stage median over patients still active at that stage. Stages no
/// patient reaches are cut from the curve.
pub fn median_product_curve(series: &[ProductSeries], max_stage: usize) -> ProductCurve {
    let mut curve = ProductCurve { stages: vec![], medians: vec![], means: vec![], counts: vec![], floored_events: vec![] };
    for t in 1..=max_stage {
        let values: Vec<f64> = series.iter().filter_map(|s| s.products.get(t - 1).copied()).collect();
        if values.is_empty() {
            break;
        }
        curve.stages.push(t);
        curve.medians.push(median(&values));
        curve.means.push(mean(&values));
        curve.counts.push(values.len());
        curve.floored_events.push(series.iter().filter(|s| s.floored_stages.contains(&t)).count());
    }
    curve
}

impl ProductCurve {
    pub fn write_csv<W: Write>(&self, out: W, state: &str, model: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "model", "stage", "median", "mean", "n", "floored_events"])?;
        self.write_rows(&mut w, state, model)?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>, state: &str, model: &str) -> Result<()> {
        for i in 0..self.stages.len() {
            w.write_record([
                state.to_string(),
                model.to_string(),
                self.stages[i].to_string(),
                fmt6(self.medians[i]),
                fmt6(self.means[i]),
                self.counts[i].to_string(),
                self.floored_events[i].to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.stages.iter().zip(&self.medians).map(|(&t, &m)| (t as f64, m)).collect()
    }
}

/// Line chart of several median curves on a log axis.
pub fn curves_svg(curves: &[(String, &ProductCurve)]) -> String {
    let mut chart = LineChart::new("Median inverse probability product", "stage t'", "median product").log_y();
    for (name, c) in curves {
        chart.add(name, c.points());
    }
    chart.render()
}

/// Target policy probabilities.
pub enum TargetPolicy<'a> {
    /// One probability vector per row.
    Table(&'a [Vec<f64>]),
    Model(&'a PolicyModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRatios {
    pub rho: Vec<f64>,
    /// Rows where the target puts mass on the observed action but the behavior model almost none.
    pub overlap_violations: Vec<usize>,
}

/// `ρ_t = p_π(a_t|s_t) / max(p̂_μ(a_t|s_t), 1e-6)` for every row.
pub fn ratios_from_probs(behavior: &[Vec<f64>], target: &[Vec<f64>], actions: &[usize]) -> Result<ImportanceRatios> {
    if behavior.len() != actions.len() || target.len() != actions.len() {
        return Err(Error::FeatureMismatch("behavior, target and action rows differ in length".into()));
    }
    let mut rho = Vec::with_capacity(actions.len());
    let mut overlap_violations = Vec::new();
    for (i, ((b, t), &a)) in behavior.iter().zip(target).zip(actions).enumerate() {
        if b.len() != t.len() {
            return Err(Error::FeatureMismatch(format!("row {i}: target covers {} actions, behavior {}", t.len(), b.len())));
        }
        if t[a] > 0.0 && b[a] < OVERLAP_THRESHOLD {
            overlap_violations.push(i);
        }
        rho.push(t[a] / b[a].max(PROB_FLOOR));
    }
    Ok(ImportanceRatios { rho, overlap_violations })
}

pub fn importance_ratios(m: &StateMatrix, behavior: &PolicyModel, target: TargetPolicy<'_>) -> Result<ImportanceRatios> {
    let b = behavior.predict_matrix(m)?;
    match target {
        TargetPolicy::Table(t) => ratios_from_probs(&b, t, &m.labels),
        TargetPolicy::Model(model) => {
            if model.class_labels != behavior.class_labels {
                return Err(Error::FeatureMismatch("target and behavior policies use different action sets".into()));
            }
            ratios_from_probs(&b, &model.predict_matrix(m)?, &m.labels)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn products_of_the_worked_example() {
        let (p, floored) = cumulative_inverse_products(&[1.0, 0.5, 0.2]);
        assert_eq!(p.len(), 3);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12 && (p[2] - 10.0).abs() < 1e-12);
        assert!(floored.is_empty());
        let s = ProductSeries { patient_id: "a".into(), products: p, floored_stages: floored };
        let c = median_product_curve(&[s], 10);
        assert_eq!(c.stages, vec![1, 2, 3]);
        assert!((c.medians[2].ln() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_model_gives_all_ones() {
        let (p, _) = cumulative_inverse_products(&[1.0; 6]);
        assert_eq!(p, vec![1.0; 6]);
    }

    #[test]
    fn zero_probability_is_floored_and_counted() {
        let (p, floored) = cumulative_inverse_products(&[0.5, 0.0, 1.0]);
        assert_eq!(floored, vec![2]);
        assert!((p[1] - 2e6).abs() < 1e-3);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn duplicate_patients_keep_the_median() {
        let s = |id: &str, v: Vec<f64>| ProductSeries { patient_id: id.into(), products: v, floored_stages: vec![] };
        let one = median_product_curve(&[s("a", vec![1.0, 4.0])], 10);
        let two = median_product_curve(&[s("a", vec![1.0, 4.0]), s("b", vec![1.0, 4.0])], 10);
        assert_eq!(one.medians, two.medians);
        assert_eq!(two.counts, vec![2, 2]);
        let ragged = median_product_curve(&[s("a", vec![1.0, 2.0, 8.0]), s("b", vec![3.0])], 10);
        assert_eq!(ragged.counts, vec![2, 1, 1]);
        assert_eq!(ragged.medians, vec![2.0, 2.0, 8.0]);
    }

    #[test]
    fn importance_ratio_reductions() {
        let b = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.0005, 0.9995]];
        let actions = [1, 0, 0];
        let same = ratios_from_probs(&b, &b, &actions).unwrap();
        assert!(same.rho.iter().all(|&r| r == 1.0));
        let one_hot: Vec<Vec<f64>> = actions.iter().map(|&a| if a == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let r = ratios_from_probs(&b, &one_hot, &actions).unwrap();
        for ((rho, p), &a) in r.rho.iter().zip(&b).zip(&actions) {
            assert_eq!(*rho, 1.0 / p[a]);
        }
        assert_eq!(r.overlap_violations, vec![2]);
        let never: Vec<Vec<f64>> = actions.iter().map(|&a| if a == 0 { vec![0.0, 1.0] } else { vec![1.0, 0.0] }).collect();
        let r = ratios_from_probs(&b, &never, &actions).unwrap();
        assert!(r.rho.iter().all(|&x| x == 0.0));
        assert!(r.overlap_violations.is_empty());
        assert!(ratios_from_probs(&b, &b[..2], &actions).is_err());
    }

    #[test]
    fn curve_csv_and_svg() {
        let s = ProductSeries { patient_id: "a".into(), products: vec![1.0, 2.5], floored_stages: vec![2] };
        let c = median_product_curve(&[s], 10);
        let mut buf = Vec::new();
        c.write_csv(&mut buf, "X_t", "lr").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "state,model,stage,median,mean,n,floored_events\nX_t,lr,1,1.000000,1.000000,1,0\nX_t,lr,2,2.500000,2.500000,1,1\n");
        roxmltree::Document::parse(&curves_svg(&[("X_t".into(), &c)])).unwrap();
    }

    proptest! {
        #[test]
        fn products_are_monotone_and_at_least_one(p in prop::collection::vec(0.0f64..=1.0, 1..30)) {
            let (prod, _) = cumulative_inverse_products(&p);
            prop_assert!(prod[0] >= 1.0);
            prop_assert!(prod.windows(2).all(|w| w[1] >= w[0]));
            let s = ProductSeries { patient_id: "x".into(), products: prod, floored_stages: vec![] };
            let c = median_product_curve(&[s], 40);
            prop_assert!(c.medians.iter().all(|&m| m >= 1.0));
            prop_assert!(c.counts.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
