//! Scene descriptions: colored primitive shapes arranged on a virtual
//! ground plane, with optional pairwise spatial relations.
//!
//! Placement is y-up. Objects rest on an invisible plane at `GROUND_Y`
//! (or on top of / inside another object) and the whole arrangement stays
//! inside `[-1,1]^3`. Relations are defined in the scene's first camera
//! view: `left of` means smaller image column, `on top of` means stacked.

use crate::error::{contract, Error, Result};
use crate::text::{self, TextCondition, Vocabulary};
use serde::{Deserialize, Serialize};

pub const GROUND_Y: f64 = -0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
    Orange,
    Purple,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Cyan,
        Color::Magenta,
        Color::Orange,
        Color::Purple,
    ];

    pub fn name(self) -> &'static str {
        text::COLORS[self as usize]
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [0.85, 0.15, 0.15],
            Color::Green => [0.15, 0.70, 0.20],
            Color::Blue => [0.20, 0.30, 0.85],
            Color::Yellow => [0.90, 0.85, 0.15],
            Color::Cyan => [0.15, 0.80, 0.80],
            Color::Magenta => [0.85, 0.20, 0.80],
            Color::Orange => [0.95, 0.55, 0.10],
            Color::Purple => [0.55, 0.20, 0.75],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Cube,
    Cone,
    Torus,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Sphere, Shape::Cube, Shape::Cone, Shape::Torus];

    pub fn name(self) -> &'static str {
        text::SHAPES[self as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    OnTopOf,
    Beside,
    Inside,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::LeftOf,
        Relation::OnTopOf,
        Relation::Beside,
        Relation::Inside,
    ];

    pub fn phrase(self) -> &'static str {
        text::RELATIONS[self as usize]
    }
}

/// One placed object. `position` is the sphere / cube / torus center or the
/// cone base center; `scale` is half the object's overall diameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Subject {
    pub color: Color,
    pub shape: Shape,
    pub scale: f64,
    pub position: [f64; 3],
}

impl Subject {
    /// Half-extent of the footprint in the ground plane.
    pub fn footprint(&self) -> f64 {
        match self.shape {
            Shape::Cube => self.scale * std::f64::consts::SQRT_2,
            _ => self.scale,
        }
    }

    /// Reference-point height when resting on a surface at `y`.
    pub fn rest_y(&self, surface_y: f64) -> f64 {
        match self.shape {
            Shape::Sphere | Shape::Cube => surface_y + self.scale,
            Shape::Cone => surface_y,
            Shape::Torus => surface_y + 0.25 * self.scale,
        }
    }

    /// Height of the object's top above the reference point, plus reference
    /// offset from its resting surface; together the object's total height.
    pub fn top_y(&self) -> f64 {
        match self.shape {
            Shape::Sphere | Shape::Cube => self.position[1] + self.scale,
            Shape::Cone => self.position[1] + 2.0 * self.scale,
            Shape::Torus => self.position[1] + 0.25 * self.scale,
        }
    }

    /// Radius of the open center of a torus lying flat.
    pub fn hole_radius(&self) -> f64 {
        0.5 * self.scale
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub subjects: Vec<Subject>,
    /// One entry per consecutive subject pair; `None` reads as `and`.
    pub relations: Vec<Option<Relation>>,
}

impl SceneSpec {
    pub fn prompt_spec(&self) -> PromptSpec {
        PromptSpec {
            subjects: self.subjects.iter().map(|s| (s.color, s.shape)).collect(),
            relations: self.relations.clone(),
        }
    }

    pub fn prompt(&self) -> String {
        self.prompt_spec().prompt()
    }

    pub fn condition(&self, vocab: &Vocabulary) -> Result<TextCondition> {
        self.prompt_spec().condition(vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() || self.subjects.len() > 3 {
            return Err(contract("scene must have 1 to 3 subjects"));
        }
        if self.relations.len() + 1 != self.subjects.len() {
            return Err(contract("need exactly one relation slot per subject pair"));
        }
        for (i, a) in self.subjects.iter().enumerate() {
            if a.scale <= 0.0 {
                return Err(contract("subject scale must be positive"));
            }
            let foot = a.footprint();
            if a.position[0].abs() + foot > 0.95
                || a.position[2].abs() + foot > 0.95
                || a.top_y() > 0.95
                || a.position[1] < GROUND_Y - 1e-9
            {
                return Err(Error::Contract(format!("subject {i} leaves the scene bounds")));
            }
            for (j, b) in self.subjects.iter().enumerate().skip(i + 1) {
                if a.color == b.color {
                    return Err(contract("subject colors must be distinct"));
                }
                if self.pair_is_attached(i, j) {
                    continue;
                }
                let dx = a.position[0] - b.position[0];
                let dz = a.position[2] - b.position[2];
                let dist = (dx * dx + dz * dz).sqrt();
                if dist + 1e-9 < a.footprint() + b.footprint() {
                    return Err(Error::Contract(format!(
                        "subjects {i} and {j} intersect (distance {dist:.3})"
                    )));
                }
            }
        }
        for (k, rel) in self.relations.iter().enumerate() {
            let (a, b) = (&self.subjects[k], &self.subjects[k + 1]);
            match rel {
                Some(Relation::OnTopOf) => {
                    if b.shape != Shape::Cube {
                        return Err(contract("objects can only be stacked on a cube"));
                    }
                    let off = ((a.position[0] - b.position[0]).powi(2)
                        + (a.position[2] - b.position[2]).powi(2))
                    .sqrt();
                    if off > b.scale || a.position[1] <= b.position[1] {
                        return Err(contract("stacked subject is not resting on its support"));
                    }
                }
                Some(Relation::Inside) => {
                    if b.shape != Shape::Torus {
                        return Err(contract("only a torus can contain another object"));
                    }
                    let off = ((a.position[0] - b.position[0]).powi(2)
                        + (a.position[2] - b.position[2]).powi(2))
                    .sqrt();
                    if off + a.footprint() > b.hole_radius() + 1e-9 {
                        return Err(contract("contained subject does not fit the opening"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Whether the consecutive pair `(i, j)` is stacked or contained, which
    /// exempts it from the separation rule.
    fn pair_is_attached(&self, i: usize, j: usize) -> bool {
        j == i + 1
            && matches!(
                self.relations[i],
                Some(Relation::OnTopOf) | Some(Relation::Inside)
            )
    }
}

/// The prompt-level content of a scene: what to draw, not where it ended up.
/// This is all the composition metric is allowed to know about a generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub subjects: Vec<(Color, Shape)>,
    pub relations: Vec<Option<Relation>>,
}

impl PromptSpec {
    pub fn prompt(&self) -> String {
        let mut out = String::new();
        for (i, (color, shape)) in self.subjects.iter().enumerate() {
            if i > 0 {
                out.push_str(match self.relations[i - 1] {
                    Some(r) => r.phrase(),
                    None => "and",
                });
                out.push(' ');
            }
            out.push_str("a ");
            out.push_str(color.name());
            out.push(' ');
            out.push_str(shape.name());
            if i + 1 < self.subjects.len() {
                out.push(' ');
            }
        }
        out
    }

    pub fn condition(&self, vocab: &Vocabulary) -> Result<TextCondition> {
        TextCondition::from_text(&self.prompt(), vocab)
    }

    /// Recover the structured form from a tokenized prompt.
    pub fn from_condition(cond: &TextCondition, vocab: &Vocabulary) -> Result<Self> {
        let mut subjects = Vec::new();
        let mut relations = Vec::new();
        let ids = &cond.token_ids;
        if ids.first() != Some(&text::SOT_ID) {
            return Err(contract("prompt must begin with the start token"));
        }
        let mut i = 1;
        while i < ids.len() {
            if !subjects.is_empty() {
                let word = vocab.word(ids[i])?;
                if word == "and" {
                    relations.push(None);
                } else if text::is_relation(ids[i]) {
                    let rel = Relation::ALL
                        .into_iter()
                        .find(|r| r.phrase() == word)
                        .ok_or_else(|| contract("unknown relation token"))?;
                    relations.push(Some(rel));
                } else {
                    return Err(contract("expected a relation or `and` between subjects"));
                }
                i += 1;
            }
            if i + 2 >= ids.len() {
                return Err(contract("truncated subject phrase"));
            }
            if vocab.word(ids[i])? != "a" {
                return Err(contract("subject phrase must start with `a`"));
            }
            let color_word = vocab.word(ids[i + 1])?;
            let color = Color::ALL
                .into_iter()
                .find(|c| c.name() == color_word)
                .ok_or_else(|| contract("expected a color after `a`"))?;
            let shape_word = vocab.word(ids[i + 2])?;
            let shape = Shape::ALL
                .into_iter()
                .find(|s| s.name() == shape_word)
                .ok_or_else(|| contract("expected a shape after the color"))?;
            subjects.push((color, shape));
            i += 3;
        }
        if subjects.is_empty() {
            return Err(contract("prompt names no subjects"));
        }
        Ok(Self {
            subjects,
            relations,
        })
    }
}
