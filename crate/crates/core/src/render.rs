//! SVG rendering of block grids and tracks.
//!
//! World `y` points up; the SVG is flipped so the floor plan reads the
//! usual way round. Element order is fixed (background, blocks in row-major
//! order, tracks, legend) so equal inputs give equal bytes.

use std::fmt::Write;

use crate::classify::AreaClass;
use crate::error::{Error, Result};
use crate::grid::GridMap;
use crate::reckoning::Track;

/// Pixels per metre.
pub const SCALE: f64 = 20.0;
pub const BACKGROUND: &str = "#ffffff";
pub const UNLABELED: &str = "#bdbdbd";
const LEGEND_W: f64 = 120.0;

pub fn class_fill(class: AreaClass) -> &'static str {
    match class {
        AreaClass::Office => "#8ecae6",
        AreaClass::Corridor => "#ffb703",
        AreaClass::Elevator => "#d62828",
        AreaClass::Stairs => "#2a9d8f",
    }
}

fn fill_of(label: Option<AreaClass>) -> &'static str {
    label.map(class_fill).unwrap_or(UNLABELED)
}

pub fn render_svg(grid: &GridMap, tracks: Option<&[Track]>) -> Result<String> {
    if grid.blocks.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let spec = &grid.spec;
    let plan_w = spec.width as f64 * spec.block_size * SCALE;
    let plan_h = spec.height as f64 * spec.block_size * SCALE;
    let legend_rows = 5.0;
    let w = plan_w + LEGEND_W;
    let h = plan_h.max(20.0 * legend_rows + 10.0);
    let px = |x: f64| (x - spec.origin.0) * SCALE;
    let py = |y: f64| plan_h - (y - spec.origin.1) * SCALE;

    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2}" height="{h:.2}" viewBox="0 0 {w:.2} {h:.2}">"#).unwrap();
    writeln!(out, r#"<rect class="background" x="0" y="0" width="{w:.2}" height="{h:.2}" fill="{BACKGROUND}"/>"#).unwrap();

    let side = spec.block_size * SCALE;
    let mut unlabeled = false;
    for id in grid.blocks.keys() {
        let label = grid.label(*id);
        unlabeled |= label.is_none();
        let x = px(spec.origin.0 + id.col as f64 * spec.block_size);
        let y = py(spec.origin.1 + (id.row + 1) as f64 * spec.block_size);
        writeln!(
            out,
            r#"<rect class="block" data-col="{}" data-row="{}" x="{x:.2}" y="{y:.2}" width="{side:.2}" height="{side:.2}" fill="{}" stroke="{BACKGROUND}" stroke-width="0.5"/>"#,
            id.col,
            id.row,
            fill_of(label)
        )
        .unwrap();
    }

    for track in tracks.unwrap_or_default() {
        if track.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = track.points.iter().map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y))).collect();
        writeln!(
            out,
            r##"<polyline class="track" data-trace="{}" points="{}" fill="none" stroke="#333333" stroke-width="1"/>"##,
            escape(&track.trace_id),
            pts.join(" ")
        )
        .unwrap();
    }

    let mut entries: Vec<(&str, &str)> = AreaClass::ALL.iter().map(|c| (c.name(), class_fill(*c))).collect();
    if unlabeled {
        entries.push(("unlabeled", UNLABELED));
    }
    for (i, (name, fill)) in entries.iter().enumerate() {
        let x = plan_w + 10.0;
        let y = 10.0 + 20.0 * i as f64;
        writeln!(out, r#"<rect class="legend" x="{x:.2}" y="{y:.2}" width="12.00" height="12.00" fill="{fill}"/>"#).unwrap();
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11">{name}</text>"#, x + 18.0, y + 10.0).unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BlockAccumulator, BlockId, GridSpec};
    use std::collections::{BTreeMap, BTreeSet};

    fn fills(svg: &str) -> BTreeSet<String> {
        svg.split("fill=\"").skip(1).map(|s| s[..s.find('"').unwrap()].to_string()).filter(|f| f != "none").collect()
    }

    fn one_block(label: Option<AreaClass>) -> GridMap {
        let mut g = GridMap::new(GridSpec::new((0.0, 0.0), 1.0, 1, 1).unwrap());
        let id = BlockId::new(0, 0);
        g.blocks.insert(id, BlockAccumulator::default());
        if let Some(l) = label {
            g.labels = Some(BTreeMap::from([(id, l)]));
        }
        g
    }

    #[test]
    fn single_block_with_legend() {
        let svg = render_svg(&one_block(Some(AreaClass::Stairs)), None).unwrap();
        assert_eq!(svg.matches(r#"class="block""#).count(), 1);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 4);
        assert!(!svg.contains("unlabeled"));
        assert_eq!(svg, render_svg(&one_block(Some(AreaClass::Stairs)), None).unwrap());
    }

    #[test]
    fn unlabeled_blocks_get_their_own_swatch() {
        let svg = render_svg(&one_block(None), None).unwrap();
        assert_eq!(svg.matches(r#"class="legend""#).count(), 5);
        assert!(fills(&svg).contains(UNLABELED));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let g = GridMap::new(GridSpec::new((0.0, 0.0), 1.0, 2, 2).unwrap());
        assert!(matches!(render_svg(&g, None), Err(Error::EmptyGrid)));
    }

    #[test]
    fn four_class_colors_plus_background() {
        let mut g = GridMap::new(GridSpec::new((0.0, 0.0), 1.0, 4, 1).unwrap());
        let mut labels = BTreeMap::new();
        for (i, c) in AreaClass::ALL.into_iter().enumerate() {
            g.blocks.insert(BlockId::new(i as u32, 0), BlockAccumulator::default());
            labels.insert(BlockId::new(i as u32, 0), c);
        }
        g.labels = Some(labels);
        let f = fills(&render_svg(&g, None).unwrap());
        assert_eq!(f.len(), 5);
        assert!(f.contains(BACKGROUND));
    }
}
