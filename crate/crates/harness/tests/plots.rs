use std::collections::BTreeSet;

use trifusion_core::objectives::normalize_state;
use trifusion_core::simulator::LocationGrid;
use trifusion_core::{Direction, ImageTensor};
use trifusion_core::fusion::{Attention, JointHeatmap};
use trifusion_harness::eval::{Record, RecordRow};
use trifusion_harness::plots::{emit_plots, fusion_panel, palette, scatter_svg, violin_svg};

fn lab_record() -> Record {
    let mut rows = Vec::new();
    for (k, c) in LocationGrid::lab().cases().into_iter().enumerate() {
        let t = normalize_state(&c.state()).unwrap().to_array();
        for i in 0..3 {
            let wobble = 0.002 * ((k * 3 + i) % 7) as f64 - 0.006;
            rows.push(RecordRow {
                case_id: c.id(),
                index: i,
                p_x: c.p_x,
                p_y: c.p_y,
                d: c.d,
                truth: t,
                pred: [t[0] + wobble, t[1] - wobble, (t[2] + 3.0 * wobble).clamp(0.0, 1.0)],
            });
        }
    }
    Record {
        run: "lab".into(),
        modalities: "O+A+P".into(),
        rows,
    }
}

fn legend_colors(svg: &str) -> BTreeSet<String> {
    svg.lines()
        .filter(|l| l.contains(r#"class="legend""#))
        .map(|l| l.split(r#"fill=""#).nth(1).unwrap().split('"').next().unwrap().to_string())
        .collect()
}

#[test]
fn forty_two_locations_get_forty_two_colors() {
    let svg = scatter_svg(&lab_record()).unwrap();
    assert_eq!(legend_colors(&svg).len(), 42);
    assert_eq!(palette(42).iter().collect::<BTreeSet<_>>().len(), 42);
}

#[test]
fn violin_marks_mean_and_extrema_per_class() {
    let svg = violin_svg(&lab_record()).unwrap();
    for mark in ["mean", "lower", "upper"] {
        assert_eq!(svg.matches(&format!(r#"class="{mark}""#)).count(), 3, "{mark}");
    }
    let rec = lab_record();
    let left: Vec<f64> = rec.rows.iter().filter(|r| r.d == Direction::L).map(|r| r.pred[2]).collect();
    let hi = left.iter().cloned().fold(f64::MIN, f64::max);
    assert!(svg.contains(&format!("upper {hi:.5}")));
}

#[test]
fn plots_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = emit_plots(&[lab_record()], a.path()).unwrap();
    let fb = emit_plots(&[lab_record()], b.path()).unwrap();
    assert_eq!(fa.len(), 5);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn empty_records_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let empty = Record {
        run: "none".into(),
        modalities: "O".into(),
        rows: vec![],
    };
    assert!(emit_plots(&[empty.clone()], dir.path()).is_err());
    assert!(emit_plots(&[], dir.path()).is_err());
    assert!(scatter_svg(&empty).is_err());
}

#[test]
fn fusion_panel_is_a_triple_width_png() {
    let img = ImageTensor::zeros(3, 8, 8);
    let mut heatmap = JointHeatmap::zeros(8, 8);
    heatmap.field[9] = 1.0;
    let att = Attention {
        rgba: ImageTensor::zeros(4, 8, 8),
        heatmap,
        receiving: vec![0],
        ranges: vec![Some(1.0)],
        sensor_errors: vec![],
    };
    let png = fusion_panel(&img, &att).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    let width = u32::from_be_bytes(png[16..20].try_into().unwrap());
    let height = u32::from_be_bytes(png[20..24].try_into().unwrap());
    assert_eq!((width, height), (24, 8));
}
