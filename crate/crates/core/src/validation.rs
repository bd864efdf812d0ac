//! Correlation between similarity to a slice centroid and delta_c.

use serde::{Deserialize, Serialize};

use crate::analysis::QueryContext;
use crate::error::{Error, Result};
use crate::slicing::Slice;

/// Ordinary least squares fit of `y` on `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
}

impl LinearFit {
    pub fn ols(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if xs.is_empty() {
            return Err(Error::Empty("points"));
        }
        if xs.iter().all(|&x| x == xs[0]) {
            return Err(Error::DegenerateFit);
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let (dx, dy) = (x - mx, y - my);
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        let slope = sxy / sxx;
        let pearson_r = if syy > 0.0 {
            (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        Ok(Self {
            slope,
            intercept: my - slope * mx,
            pearson_r,
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub image_id: String,
    pub similarity: f64,
    pub delta_c: f64,
    pub in_slice: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    /// Every point has the same similarity; slope and intercept are absent.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub status: FitStatus,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub pearson_r: f64,
    pub points: Vec<CorrelationPoint>,
}

impl CorrelationReport {
    /// Builds a report from explicit points.
    pub fn from_points(points: Vec<CorrelationPoint>) -> Result<Self> {
        let xs: Vec<f64> = points.iter().map(|p| p.similarity).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.delta_c).collect();
        let (status, slope, intercept, pearson_r) = match LinearFit::ols(&xs, &ys) {
            Ok(fit) => (
                FitStatus::Ok,
                Some(fit.slope),
                Some(fit.intercept),
                fit.pearson_r,
            ),
            Err(Error::DegenerateFit) => (FitStatus::Degenerate, None, None, 0.0),
            Err(e) => return Err(e),
        };
        Ok(Self {
            n: points.len(),
            status,
            slope,
            intercept,
            pearson_r,
            points,
        })
    }

    pub fn fit(&self) -> Option<LinearFit> {
        Some(LinearFit {
            slope: self.slope?,
            intercept: self.intercept?,
            pearson_r: self.pearson_r,
        })
    }
}

/// One point per working-set image: cosine to the slice centroid vs delta_c.
/// Slice members are included in both the scatter and the fit.
pub fn correlation_report(slice: &Slice, ctx: &QueryContext) -> Result<CorrelationReport> {
    let centroid = slice.centroid().ok_or(Error::Empty("slice"))?;
    let sims = ctx.similarities_to(centroid)?;
    let mut in_slice = vec![false; ctx.len()];
    for &m in slice.members() {
        in_slice[m] = true;
    }
    let points = sims
        .into_iter()
        .enumerate()
        .map(|(pos, similarity)| CorrelationPoint {
            image_id: ctx.id(pos).to_string(),
            similarity,
            delta_c: ctx.delta_c(pos),
            in_slice: in_slice[pos],
        })
        .collect();
    CorrelationReport::from_points(points)
}

/// The `top_m` images furthest from the fitted line, largest residual first.
pub fn outlier_candidates(report: &CorrelationReport, top_m: usize) -> Result<Vec<String>> {
    let fit = report.fit().ok_or(Error::DegenerateFit)?;
    let mut ranked: Vec<(f64, &str)> = report
        .points
        .iter()
        .map(|p| {
            (
                (p.delta_c - fit.predict(p.similarity)).abs(),
                p.image_id.as_str(),
            )
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked
        .into_iter()
        .take(top_m)
        .map(|(_, id)| id.to_string())
        .collect())
}
