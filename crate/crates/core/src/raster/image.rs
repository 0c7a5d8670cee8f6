//! Netpbm writers for human inspection. An optional comment line (used for
//! provenance) goes right after the magic number.

fn header(magic: &str, width: usize, height: usize, comment: Option<&str>) -> Vec<u8> {
    let mut out = format!("{magic}\n").into_bytes();
    if let Some(c) = comment {
        for line in c.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    out
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary P6 from an H×W×3 buffer in [0, 1]; values are clamped.
pub fn write_ppm(width: usize, height: usize, rgb: &[f64], comment: Option<&str>) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = header("P6", width, height, comment);
    out.extend(rgb.iter().map(|&v| quantize(v)));
    out
}

/// Binary P5 mask: 255 where set, 0 elsewhere.
pub fn write_pgm(width: usize, height: usize, mask: &[bool], comment: Option<&str>) -> Vec<u8> {
    assert_eq!(mask.len(), width * height);
    let mut out = header("P5", width, height, comment);
    out.extend(mask.iter().map(|&m| if m { 255 } else { 0 }));
    out
}
