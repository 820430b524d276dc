//! `export-overlay`: the template with a small sphere at every lesion.
//!
//! Both lesions of a matched pair get the same color, derived from their ids
//! so it does not change between runs. Unmatched source lesions are pure red
//! and unmatched target lesions pure blue; pair colors are never fully
//! saturated, so they cannot collide with either flag.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Result};
use lesionflow::mesh::io::{color_byte, write_ply, PlyData};
use lesionflow::synth::icosphere;
use lesionflow::{Mesh, Vec3};
use sha2::{Digest, Sha256};

use crate::stages::{LocationsFile, ReportFile};

pub const UNMATCHED_SRC: [u8; 3] = [255, 0, 0];
pub const UNMATCHED_TGT: [u8; 3] = [0, 0, 255];
const BACKGROUND: [f64; 3] = [200.0 / 255.0, 200.0 / 255.0, 200.0 / 255.0];

/// Color of a matched pair: hue, saturation and value drawn from a hash of
/// the two ids.
pub fn pair_color(src: &str, tgt: &str) -> [u8; 3] {
    let mut h = Sha256::new();
    h.update(src.as_bytes());
    h.update([0]);
    h.update(tgt.as_bytes());
    let d = h.finalize();
    let hue = u32::from_le_bytes([d[0], d[1], d[2], d[3]]) as f64 / 4_294_967_296.0 * 6.0;
    let sat = 0.45 + 0.35 * (d[4] as f64 / 255.0);
    let val = 0.7 + 0.3 * (d[5] as f64 / 255.0);
    let c = val * sat;
    let x = c * (1.0 - ((hue % 2.0) - 1.0).abs());
    let (r, g, b) = match hue as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [color_byte(r + m), color_byte(g + m), color_byte(b + m)]
}

/// Overlay geometry: template vertices first, then one sphere per lesion.
pub fn build_overlay(
    template: &Mesh,
    report: &ReportFile,
    locations: &LocationsFile,
    glyph_radius: f64,
) -> Result<PlyData> {
    let mut data = PlyData {
        vertices: template.vertices().to_vec(),
        triangles: template.triangles().to_vec(),
        colors: template.colors().map(|c| c.to_vec()),
        comments: vec![format!("lesionflow overlay for config_hash {}", report.config_hash)],
    };
    let r = &report.report;
    if r.matches.is_empty() && r.unmatched_src.is_empty() && r.unmatched_tgt.is_empty() {
        return Ok(data);
    }
    let src: HashMap<&str, usize> = locations.src.iter().enumerate().map(|(k, l)| (l.id.as_str(), k)).collect();
    let tgt: HashMap<&str, usize> = locations.tgt.iter().enumerate().map(|(k, l)| (l.id.as_str(), k)).collect();
    let position = |side: &HashMap<&str, usize>, list: &[crate::stages::LocatedLesion], id: &str| -> Result<Vec3> {
        match side.get(id) {
            Some(&k) => Ok(template.embed(&list[k].refined)?),
            None => bail!("lesion '{id}' is in the report but not in the locations file"),
        }
    };

    let glyph = icosphere(1, glyph_radius)?;
    let mut colors = data
        .colors
        .take()
        .unwrap_or_else(|| vec![BACKGROUND; template.num_vertices()]);
    let mut add = |center: Vec3, color: [u8; 3]| {
        let base = data.vertices.len();
        data.vertices.extend(glyph.vertices().iter().map(|v| v + center));
        data.triangles
            .extend(glyph.triangles().iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        let c = color.map(|b| b as f64 / 255.0);
        colors.extend(std::iter::repeat_n(c, glyph.num_vertices()));
    };
    for m in &r.matches {
        let color = pair_color(&m.src, &m.tgt);
        add(position(&src, &locations.src, &m.src)?, color);
        add(position(&tgt, &locations.tgt, &m.tgt)?, color);
    }
    for u in &r.unmatched_src {
        add(Vec3::from(u.pos_mm), UNMATCHED_SRC);
    }
    for u in &r.unmatched_tgt {
        add(Vec3::from(u.pos_mm), UNMATCHED_TGT);
    }
    data.colors = Some(colors);
    Ok(data)
}

pub fn export_overlay(
    template: &Mesh,
    report: &ReportFile,
    locations: &LocationsFile,
    glyph_radius: f64,
    out: &Path,
) -> Result<()> {
    let data = build_overlay(template, report, locations, glyph_radius)?;
    write_ply(out, &data)?;
    Ok(())
}
