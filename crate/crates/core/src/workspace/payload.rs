//! Modality-specific payloads, their token cost and canonical byte encoding.

use serde::{Deserialize, Serialize};

use crate::encoding::{ByteReader, ByteWriter, DecodeError};
use crate::facts;
use crate::grid::Grid;
use crate::microworld::geometry::{Motion, PoseRecord};
use crate::microworld::render::{DepthMap, Intrinsics, ViewRender};
use crate::microworld::scene::{Category, Color, Scene};

use super::WorkspaceError;

/// Fixed token cost of a textual pose record.
pub const POSE_COST: u64 = 12;
/// Number of coarse depth buckets in a visual token.
pub const DEPTH_BUCKETS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Text,
    VisualTokens,
    Pose,
    Depth,
    SynthView,
    RawView,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Text,
        Modality::VisualTokens,
        Modality::Pose,
        Modality::Depth,
        Modality::SynthView,
        Modality::RawView,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Modality::Text => 0,
            Modality::VisualTokens => 1,
            Modality::Pose => 2,
            Modality::Depth => 3,
            Modality::SynthView => 4,
            Modality::RawView => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Modality> {
        Modality::ALL.get(tag as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::VisualTokens => "visual_tokens",
            Modality::Pose => "pose",
            Modality::Depth => "depth",
            Modality::SynthView => "synth_view",
            Modality::RawView => "raw_view",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// What an object looks like in an image; the symbolic stand-in for colour
/// and shape appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Appearance {
    pub id: u32,
    pub category: Category,
    pub color: Color,
}

/// Appearance of every object visible in `ids`, ascending by id.
pub fn legend_for(scene: &Scene, ids: &Grid<u32>) -> Vec<Appearance> {
    let mut seen: Vec<u32> = ids.cells().iter().copied().filter(|&i| i != 0).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.into_iter()
        .filter_map(|id| scene.object(id))
        .map(|o| Appearance {
            id: o.id,
            category: o.category,
            color: o.color,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub bucket: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    /// 1-based view the tokens describe.
    pub view: u32,
    pub cells: Grid<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosePayload {
    pub from_view: u32,
    pub to_view: u32,
    /// Pose of `to_view` in `from_view`'s frame, as a [`PoseRecord`] string.
    pub record: String,
}

impl PosePayload {
    pub fn parsed(&self) -> Result<PoseRecord, WorkspaceError> {
        self.record
            .parse()
            .map_err(|e| WorkspaceError::MalformedPayload(format!("pose: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPayload {
    pub view: u32,
    pub map: DepthMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthViewPayload {
    pub source_view: u32,
    pub motion: Motion,
    pub step: f64,
    pub fov_deg: f64,
    pub render: ViewRender,
    pub legend: Vec<Appearance>,
}

impl SynthViewPayload {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(self.render.width(), self.render.height(), self.fov_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawViewPayload {
    pub view: u32,
    pub fov_deg: f64,
    pub render: ViewRender,
    pub legend: Vec<Appearance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Payload {
    Text(String),
    VisualTokens(TokenGrid),
    Pose(PosePayload),
    Depth(DepthPayload),
    SynthView(SynthViewPayload),
    RawView(RawViewPayload),
}

fn coarse_cost(cells: usize) -> u64 {
    cells.div_ceil(4) as u64
}

fn render_well_formed(r: &ViewRender) -> bool {
    r.ids.same_shape(&r.depth)
        && !r.ids.is_empty()
        && r
            .ids
            .cells()
            .iter()
            .zip(r.depth.cells())
            .all(|(&id, &d)| d.is_finite() && ((id != 0) == (d > 0.0)))
}

fn legend_sorted(legend: &[Appearance]) -> bool {
    legend.windows(2).all(|w| w[0].id < w[1].id) && legend.iter().all(|a| a.id != 0)
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Text(_) => Modality::Text,
            Payload::VisualTokens(_) => Modality::VisualTokens,
            Payload::Pose(_) => Modality::Pose,
            Payload::Depth(_) => Modality::Depth,
            Payload::SynthView(_) => Modality::SynthView,
            Payload::RawView(_) => Modality::RawView,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Payload::Text(t) => Some(t),
            _ => None,
        }
    }

    /// Structural checks for the payload's modality.
    pub fn validate(&self) -> Result<(), WorkspaceError> {
        let bad = |m: &str| Err(WorkspaceError::MalformedPayload(m.to_string()));
        match self {
            Payload::Text(_) => Ok(()),
            Payload::VisualTokens(t) => {
                if t.cells.is_empty() {
                    return bad("empty token grid");
                }
                if t.cells.cells().iter().any(|c| c.bucket >= DEPTH_BUCKETS) {
                    return bad("token depth bucket out of range");
                }
                Ok(())
            }
            Payload::Pose(p) => p.parsed().map(|_| ()),
            Payload::Depth(d) => {
                if d.map.grid.is_empty() || !d.map.is_well_formed() {
                    return bad("depth map");
                }
                Ok(())
            }
            Payload::SynthView(s) => {
                if !(s.step.is_finite() && s.step >= 0.0) {
                    return bad("synth view step");
                }
                if !render_well_formed(&s.render) || !legend_sorted(&s.legend) {
                    return bad("synth view render");
                }
                Ok(())
            }
            Payload::RawView(v) => {
                if !render_well_formed(&v.render) || !legend_sorted(&v.legend) {
                    return bad("raw view render");
                }
                Ok(())
            }
        }
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        match self {
            Payload::Text(t) => {
                w.str(t);
            }
            Payload::VisualTokens(t) => {
                w.u32(t.view)
                    .u32(t.cells.width() as u32)
                    .u32(t.cells.height() as u32);
                for c in t.cells.cells() {
                    w.u32(c.id).u8(c.bucket);
                }
            }
            Payload::Pose(p) => {
                w.u32(p.from_view).u32(p.to_view).str(&p.record);
            }
            Payload::Depth(d) => {
                w.u32(d.view);
                d.map.encode(w);
            }
            Payload::SynthView(s) => {
                w.u32(s.source_view)
                    .u8(s.motion.code())
                    .f64(s.step)
                    .f64(s.fov_deg);
                s.render.encode(w);
                encode_legend(w, &s.legend);
            }
            Payload::RawView(v) => {
                w.u32(v.view).f64(v.fov_deg);
                v.render.encode(w);
                encode_legend(w, &v.legend);
            }
        }
    }

    pub fn decode(modality: Modality, r: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        Ok(match modality {
            Modality::Text => Payload::Text(r.str()?.to_string()),
            Modality::VisualTokens => {
                let view = r.u32()?;
                let w = r.u32()? as usize;
                let h = r.u32()? as usize;
                if w * h > 1 << 20 {
                    return Err(DecodeError::Invalid("token grid too large".into()));
                }
                let cells = (0..w * h)
                    .map(|_| {
                        Ok(Token {
                            id: r.u32()?,
                            bucket: r.u8()?,
                        })
                    })
                    .collect::<Result<Vec<_>, DecodeError>>()?;
                Payload::VisualTokens(TokenGrid {
                    view,
                    cells: Grid::from_cells(w, h, cells).unwrap(),
                })
            }
            Modality::Pose => Payload::Pose(PosePayload {
                from_view: r.u32()?,
                to_view: r.u32()?,
                record: r.str()?.to_string(),
            }),
            Modality::Depth => Payload::Depth(DepthPayload {
                view: r.u32()?,
                map: DepthMap::decode(r)?,
            }),
            Modality::SynthView => {
                let source_view = r.u32()?;
                let motion = Motion::from_code(r.u8()?)
                    .ok_or_else(|| DecodeError::Invalid("motion".into()))?;
                let step = r.f64()?;
                let fov_deg = r.f64()?;
                let render = ViewRender::decode(r)?;
                let legend = decode_legend(r)?;
                Payload::SynthView(SynthViewPayload {
                    source_view,
                    motion,
                    step,
                    fov_deg,
                    render,
                    legend,
                })
            }
            Modality::RawView => {
                let view = r.u32()?;
                let fov_deg = r.f64()?;
                let render = ViewRender::decode(r)?;
                let legend = decode_legend(r)?;
                Payload::RawView(RawViewPayload {
                    view,
                    fov_deg,
                    render,
                    legend,
                })
            }
        })
    }

    /// One-line human summary for transcripts.
    pub fn summary(&self) -> String {
        match self {
            Payload::Text(t) => {
                let facts = facts::extract_facts(t).len();
                let head: String = t.chars().take(60).collect();
                let ellipsis = if t.chars().count() > 60 { "..." } else { "" };
                format!("text ({facts} facts) \"{head}{ellipsis}\"")
            }
            Payload::VisualTokens(t) => {
                let mut ids: Vec<u32> = t.cells.cells().iter().map(|c| c.id).filter(|&i| i != 0).collect();
                ids.sort_unstable();
                ids.dedup();
                format!(
                    "visual tokens {}x{} of view {} ids {:?}",
                    t.cells.width(),
                    t.cells.height(),
                    t.view,
                    ids
                )
            }
            Payload::Pose(p) => format!("pose view {}->{} {}", p.from_view, p.to_view, p.record),
            Payload::Depth(d) => format!(
                "depth of view {} ({} valid px)",
                d.view,
                d.map.valid_count()
            ),
            Payload::SynthView(s) => format!(
                "synth view of view {} moved {} {:.2}m, visible {:?}",
                s.source_view,
                s.motion,
                s.step,
                s.render.visible_ids()
            ),
            Payload::RawView(v) => format!("raw view {} visible {:?}", v.view, v.render.visible_ids()),
        }
    }
}

fn encode_legend(w: &mut ByteWriter, legend: &[Appearance]) {
    w.u32(legend.len() as u32);
    for a in legend {
        w.u32(a.id).u8(a.category.code()).u8(a.color.code());
    }
}

fn decode_legend(r: &mut ByteReader<'_>) -> Result<Vec<Appearance>, DecodeError> {
    let n = r.u32()? as usize;
    if n > 1 << 16 {
        return Err(DecodeError::Invalid("legend too large".into()));
    }
    (0..n)
        .map(|_| {
            let id = r.u32()?;
            let category = *Category::ALL
                .get(r.u8()? as usize)
                .ok_or_else(|| DecodeError::Invalid("category".into()))?;
            let color = *Color::ALL
                .get(r.u8()? as usize)
                .ok_or_else(|| DecodeError::Invalid("color".into()))?;
            Ok(Appearance {
                id,
                category,
                color,
            })
        })
        .collect()
}

/// Token cost of a payload.
///
/// Text counts whitespace tokens, visual tokens count grid cells, a pose
/// record costs a flat 12, and depth / view renders cost one token per 2×2
/// pixel block (cell count ÷ 4, rounded up).
pub fn cost_of(payload: &Payload) -> Result<u64, WorkspaceError> {
    payload.validate()?;
    Ok(match payload {
        Payload::Text(t) => t.split_whitespace().count() as u64,
        Payload::VisualTokens(t) => t.cells.len() as u64,
        Payload::Pose(_) => POSE_COST,
        Payload::Depth(d) => coarse_cost(d.map.grid.len()),
        Payload::SynthView(s) => coarse_cost(s.render.ids.len()),
        Payload::RawView(v) => coarse_cost(v.render.ids.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_cost_is_whitespace_tokens() {
        let p = Payload::Text("a red cube left of a sphere".into());
        assert_eq!(cost_of(&p).unwrap(), 7);
        assert_eq!(cost_of(&Payload::Text("  ".into())).unwrap(), 0);
    }

    #[test]
    fn token_grid_cost_is_cell_count() {
        let p = Payload::VisualTokens(TokenGrid {
            view: 1,
            cells: Grid::filled(16, 16, Token { id: 0, bucket: 0 }),
        });
        assert_eq!(cost_of(&p).unwrap(), 256);
        let bad = Payload::VisualTokens(TokenGrid {
            view: 1,
            cells: Grid::filled(2, 2, Token { id: 1, bucket: 8 }),
        });
        assert!(matches!(cost_of(&bad), Err(WorkspaceError::MalformedPayload(_))));
    }

    #[test]
    fn pose_cost_is_fixed() {
        let p = Payload::Pose(PosePayload {
            from_view: 1,
            to_view: 2,
            record: "R=(1.0000,0.0000,0.0000,0.0000) t=(0.5000,0.0000,0.0000)".into(),
        });
        assert_eq!(cost_of(&p).unwrap(), POSE_COST);
        let bad = Payload::Pose(PosePayload {
            from_view: 1,
            to_view: 2,
            record: "not a pose".into(),
        });
        assert!(cost_of(&bad).is_err());
    }

    #[test]
    fn depth_cost_rounds_up_quarter() {
        let map = DepthMap {
            grid: Grid::filled(5, 3, 1.0),
            valid: Grid::filled(5, 3, true),
        };
        let p = Payload::Depth(DepthPayload { view: 1, map });
        assert_eq!(cost_of(&p).unwrap(), 4);
        let map = DepthMap {
            grid: Grid::filled(2, 2, f64::NAN),
            valid: Grid::filled(2, 2, true),
        };
        assert!(cost_of(&Payload::Depth(DepthPayload { view: 1, map })).is_err());
    }
}
