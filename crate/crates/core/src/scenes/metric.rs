//! Composition scoring for rendered or generated views.
//!
//! The metric sees only pixels and the prompt-level content. Subjects are
//! located by palette color: a pixel counts for a color when it is within
//! tolerance of that color at some plausible shading level and no other
//! candidate (including white) is closer. A subject is present when any
//! view shows enough of its color; spatial relations are judged from color
//! centroids and boxes in the first view.

use super::spec::{Color, PromptSpec, Relation};
use crate::img::Image;

const SHADES: [f32; 3] = [0.8, 0.9, 1.0];
const COLOR_TOL: f32 = 0.15;
const PRESENCE_FRACTION: f64 = 0.005;

/// Nearest palette color within tolerance, or `None` for background and
/// unrecognizable pixels.
pub fn classify_pixel(rgb: [f32; 3]) -> Option<Color> {
    let mut best: Option<(Color, f32)> = None;
    for color in Color::ALL {
        let c = color.rgb();
        for shade in SHADES {
            let d = dist(rgb, c.map(|v| v * shade));
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((color, d));
            }
        }
    }
    let (color, d) = best?;
    if d > COLOR_TOL || dist(rgb, [1.0, 1.0, 1.0]) < d {
        return None;
    }
    Some(color)
}

fn dist(a: [f32; 3], b: [f32; 3]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone)]
struct Blob {
    count: usize,
    centroid: (f64, f64),
    bbox: [usize; 4],
}

fn find_blob(view: &Image, color: Color) -> Option<Blob> {
    let n = view.size;
    let mut count = 0usize;
    let mut sum = (0f64, 0f64);
    let mut bbox = [n, n, 0, 0];
    for r in 0..n {
        for c in 0..n {
            if classify_pixel(view.pixel(r, c)) == Some(color) {
                count += 1;
                sum.0 += r as f64;
                sum.1 += c as f64;
                bbox[0] = bbox[0].min(r);
                bbox[1] = bbox[1].min(c);
                bbox[2] = bbox[2].max(r);
                bbox[3] = bbox[3].max(c);
            }
        }
    }
    if count == 0 {
        return None;
    }
    Some(Blob {
        count,
        centroid: (sum.0 / count as f64, sum.1 / count as f64),
        bbox,
    })
}

#[derive(Debug, Clone)]
pub struct SubjectReport {
    pub present: bool,
    /// Largest pixel fraction of the subject's color over all views.
    pub pixel_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct CompositionReport {
    pub subjects: Vec<SubjectReport>,
    /// One entry per relation slot; `None` where the prompt said `and`.
    pub relations: Vec<Option<bool>>,
    /// Satisfied requirements over total requirements, in `[0,1]`.
    pub aggregate: f64,
}

pub fn score_views(views: &[Image], prompt: &PromptSpec) -> CompositionReport {
    let subjects: Vec<SubjectReport> = prompt
        .subjects
        .iter()
        .map(|(color, _)| {
            let mut best = 0f64;
            for view in views {
                if let Some(blob) = find_blob(view, *color) {
                    best = best.max(blob.count as f64 / (view.size * view.size) as f64);
                }
            }
            SubjectReport {
                present: best >= PRESENCE_FRACTION,
                pixel_fraction: best,
            }
        })
        .collect();

    let front = views.first();
    let relations: Vec<Option<bool>> = prompt
        .relations
        .iter()
        .enumerate()
        .map(|(k, rel)| {
            let rel = (*rel)?;
            let view = front?;
            let a = find_blob(view, prompt.subjects[k].0)?;
            let b = find_blob(view, prompt.subjects[k + 1].0)?;
            Some(relation_holds(rel, &a, &b))
        })
        .collect();

    let mut hits = subjects.iter().filter(|s| s.present).count();
    let mut total = subjects.len();
    for r in relations.iter().flatten() {
        total += 1;
        if *r {
            hits += 1;
        }
    }
    // a prompt relation that could not be judged (missing subject) counts
    // as an unmet requirement
    for (slot, judged) in prompt.relations.iter().zip(&relations) {
        if slot.is_some() && judged.is_none() {
            total += 1;
        }
    }
    CompositionReport {
        subjects,
        relations,
        aggregate: hits as f64 / total.max(1) as f64,
    }
}

fn relation_holds(rel: Relation, a: &Blob, b: &Blob) -> bool {
    match rel {
        Relation::LeftOf => a.centroid.1 < b.centroid.1,
        Relation::OnTopOf => {
            let overlap = a.bbox[1].max(b.bbox[1]) <= a.bbox[3].min(b.bbox[3]);
            a.centroid.0 < b.centroid.0 && overlap
        }
        Relation::Beside => {
            let rad = |x: &Blob| {
                let h = (x.bbox[2] - x.bbox[0] + 1) as f64;
                let w = (x.bbox[3] - x.bbox[1] + 1) as f64;
                h.max(w) / 2.0
            };
            let d = ((a.centroid.0 - b.centroid.0).powi(2)
                + (a.centroid.1 - b.centroid.1).powi(2))
            .sqrt();
            d <= 1.6 * (rad(a) + rad(b))
        }
        Relation::Inside => {
            a.centroid.0 >= b.bbox[0] as f64
                && a.centroid.0 <= b.bbox[2] as f64
                && a.centroid.1 >= b.bbox[1] as f64
                && a.centroid.1 <= b.bbox[3] as f64
        }
    }
}
