//! Binary morphology on row-major bit grids.
//!
//! Out-of-bounds neighbours are ignored rather than padded, so dilation and
//! closing are extensive and erosion and opening are anti-extensive.

#[inline]
fn neighbourhood(h: usize, w: usize, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
    let r0 = r.saturating_sub(1);
    let r1 = (r + 1).min(h - 1);
    let c0 = c.saturating_sub(1);
    let c1 = (c + 1).min(w - 1);
    (r0..=r1).flat_map(move |rr| (c0..=c1).map(move |cc| (rr, cc)))
}

pub fn dilate(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = neighbourhood(h, w, r, c).any(|(rr, cc)| bits[rr * w + cc]);
        }
    }
    out
}

pub fn erode(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = neighbourhood(h, w, r, c).all(|(rr, cc)| bits[rr * w + cc]);
        }
    }
    out
}

pub fn close(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    erode(&dilate(bits, h, w), h, w)
}

pub fn open(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    dilate(&erode(bits, h, w), h, w)
}

/// 3x3 binary median (majority vote) with edge-replicated borders.
pub fn median3(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for r in 0..h {
        for c in 0..w {
            let mut ones = 0;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                    let cc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                    ones += bits[rr * w + cc] as usize;
                }
            }
            out[r * w + c] = ones >= 5;
        }
    }
    out
}

/// Labels 4-connected foreground components. Returns per-pixel labels
/// (0 = background) and the area of each component, indexed by `label - 1`.
pub fn label_components(bits: &[bool], h: usize, w: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; bits.len()];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        let mut area = 0;
        labels[start] = label;
        stack.push(start);
        while let Some(p) = stack.pop() {
            area += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if bits[q] && labels[q] == 0 {
                    labels[q] = label;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Clears every 4-connected component whose area is strictly below
/// `min_area` pixels.
pub fn remove_small_components(bits: &[bool], h: usize, w: usize, min_area: f64) -> Vec<bool> {
    let (labels, areas) = label_components(bits, h, w);
    labels
        .iter()
        .map(|&l| l != 0 && (areas[l as usize - 1] as f64) >= min_area)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> (Vec<bool>, usize, usize) {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        (bits, h, w)
    }

    #[test]
    fn closing_fills_single_hole() {
        let (bits, h, w) = grid(&[".....", ".###.", ".#.#.", ".###.", "....."]);
        let closed = close(&bits, h, w);
        assert!(closed[2 * w + 2]);
        // Extensive.
        assert!(bits.iter().zip(&closed).all(|(&a, &b)| !a || b));
    }

    #[test]
    fn opening_removes_thin_spur() {
        let (bits, h, w) = grid(&["......", ".###..", ".#####", ".###..", "......"]);
        let opened = open(&bits, h, w);
        assert!(!opened[2 * w + 5]);
        assert!(opened[2 * w + 2]);
    }

    #[test]
    fn components_are_four_connected() {
        let (bits, h, w) = grid(&["#.", ".#"]);
        let (_, areas) = label_components(&bits, h, w);
        assert_eq!(areas, vec![1, 1]);
        let (bits, h, w) = grid(&["##.", ".#.", "..#"]);
        let (_, areas) = label_components(&bits, h, w);
        assert_eq!(areas, vec![3, 1]);
    }

    #[test]
    fn median_kills_isolated_pixel() {
        let (bits, h, w) = grid(&["...", ".#.", "..."]);
        assert!(median3(&bits, h, w).iter().all(|&b| !b));
    }
}
