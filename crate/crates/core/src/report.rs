//! CSV reports. Reals are printed with six decimals; absent values are
//! empty fields. Column orders are stable.

use crate::error::Result;
use crate::metrics::{DensityReport, MetricsReport};
use crate::pipeline::{BudgetRow, CostModel, FramePath};
use crate::subn::SubNReport;
use crate::types::ClassTable;

pub fn real(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))
        .map_err(csv::Error::from)?;
    Ok(String::from_utf8(bytes).expect("CSV fields are UTF-8"))
}

/// `kind,class_id,class_name,iou,accuracy,relative_runtime`: one `class`
/// row per scored class, then a `mean` row holding mIoU, class-average
/// accuracy and (for pipeline runs) the relative runtime.
pub fn metrics_csv(report: &MetricsReport, relative_runtime: Option<f64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "kind",
        "class_id",
        "class_name",
        "iou",
        "accuracy",
        "relative_runtime",
    ])?;
    for c in &report.classes {
        w.write_record([
            "class",
            &c.id.to_string(),
            &c.name,
            &opt(c.iou),
            &opt(c.accuracy),
            "",
        ])?;
    }
    w.write_record([
        "mean",
        "",
        "",
        &real(report.miou),
        &real(report.class_avg_accuracy),
        &opt(relative_runtime),
    ])?;
    finish(w)
}

/// `scope,spatial_density,temporal_density,annotated_pixels,total_pixels,annotated_frames,total_frames`.
pub fn density_csv(rows: &[(String, DensityReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scope",
        "spatial_density",
        "temporal_density",
        "annotated_pixels",
        "total_pixels",
        "annotated_frames",
        "total_frames",
    ])?;
    for (scope, d) in rows {
        w.write_record([
            scope.as_str(),
            &real(d.spatial_density),
            &real(d.temporal_density),
            &d.annotated_pixels.to_string(),
            &d.total_pixels.to_string(),
            &d.annotated_frames.to_string(),
            &d.total_frames.to_string(),
        ])?;
    }
    finish(w)
}

/// `stride,miou,class_avg_accuracy,iou_<name>...`, one row per stride.
pub fn subn_csv(reports: &[SubNReport], table: &ClassTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "stride".to_string(),
        "miou".into(),
        "class_avg_accuracy".into(),
    ];
    for &id in table.scored_ids() {
        header.push(format!("iou_{}", table.info(id).expect("scored id").name));
    }
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.stride.to_string(),
            real(r.metrics.miou),
            real(r.metrics.class_avg_accuracy),
        ];
        row.extend(
            table
                .scored_ids()
                .iter()
                .map(|&id| opt(r.metrics.iou_of(id))),
        );
        w.write_record(&row)?;
    }
    finish(w)
}

/// `period,relative_runtime,cost_prime,cost_approx,cost_ensemble,provenance`.
pub fn budget_csv(rows: &[BudgetRow], costs: &CostModel) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "period",
        "relative_runtime",
        "cost_prime",
        "cost_approx",
        "cost_ensemble",
        "provenance",
    ])?;
    for r in rows {
        w.write_record([
            &r.period.to_string(),
            &real(r.relative_runtime),
            &real(costs.cost_prime),
            &real(costs.cost_approx),
            &real(costs.cost_ensemble),
            &costs.provenance,
        ])?;
    }
    finish(w)
}

/// `sequence,frame,path,cost`.
pub fn cost_trace_csv(rows: &[(String, Vec<(FramePath, f64)>)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sequence", "frame", "path", "cost"])?;
    for (id, frames) in rows {
        for (t, (path, cost)) in frames.iter().enumerate() {
            let p = match path {
                FramePath::Primed => "primed",
                FramePath::Approximated => "approximated",
            };
            w.write_record([id.as_str(), &t.to_string(), p, &real(*cost)])?;
        }
    }
    finish(w)
}

/// `epoch,loss`, epochs counted from 1.
pub fn loss_csv(losses: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), real(*l)])?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ClassScore;
    use crate::pipeline::PrimingPeriod;

    #[test]
    fn metrics_layout() {
        let r = MetricsReport {
            classes: vec![
                ClassScore {
                    id: 0,
                    name: "road".into(),
                    iou: Some(0.5),
                    accuracy: Some(1.0),
                },
                ClassScore {
                    id: 1,
                    name: "lane".into(),
                    iou: None,
                    accuracy: None,
                },
            ],
            miou: 0.5,
            class_avg_accuracy: 1.0,
        };
        let text = metrics_csv(&r, Some(0.36)).unwrap();
        assert_eq!(
            text,
            "kind,class_id,class_name,iou,accuracy,relative_runtime\n\
             class,0,road,0.500000,1.000000,\n\
             class,1,lane,,,\n\
             mean,,,0.500000,1.000000,0.360000\n"
        );
    }

    #[test]
    fn budget_and_trace_layout() {
        let c = CostModel::new(1.0, 0.1, 0.1, "file: a, b").unwrap();
        let rows = [BudgetRow {
            period: PrimingPeriod::FirstOnly,
            relative_runtime: 0.25,
        }];
        assert_eq!(
            budget_csv(&rows, &c).unwrap(),
            "period,relative_runtime,cost_prime,cost_approx,cost_ensemble,provenance\n\
             inf,0.250000,1.000000,0.100000,0.100000,\"file: a, b\"\n"
        );
        let trace = cost_trace_csv(&[(
            "seq_000".into(),
            vec![(FramePath::Primed, 1.0), (FramePath::Approximated, 0.2)],
        )])
        .unwrap();
        assert_eq!(trace, "sequence,frame,path,cost\nseq_000,0,primed,1.000000\nseq_000,1,approximated,0.200000\n");
        assert_eq!(loss_csv(&[0.5]).unwrap(), "epoch,loss\n1,0.500000\n");
    }
}
