//! Outer-boundary extraction for binary masks.

use std::collections::VecDeque;

use crate::raster::Mask;
use crate::tps::Point2;

// Clockwise on screen (y grows downward), starting west.
const DIRS: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("offset is not an 8-neighbour")
}

/// Largest 8-connected foreground component. Ties go to the component whose
/// first pixel comes first in raster order.
pub fn largest_component(mask: &Mask) -> Mask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut label = vec![0u32; (w * h) as usize];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for (sx, sy) in mask.foreground() {
        let idx = (sy as i64 * w + sx as i64) as usize;
        if label[idx] != 0 {
            continue;
        }
        next += 1;
        label[idx] = next;
        queue.push_back((sx as i64, sy as i64));
        let mut size = 0usize;
        while let Some((x, y)) = queue.pop_front() {
            size += 1;
            for (dx, dy) in DIRS {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let nidx = (ny * w + nx) as usize;
                    if label[nidx] == 0 {
                        label[nidx] = next;
                        queue.push_back((nx, ny));
                    }
                }
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    let keep = best.1;
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        keep != 0 && label[(y as i64 * w + x as i64) as usize] == keep
    })
}

/// Moore-neighbour trace of the outer boundary of the largest component,
/// starting at its first pixel in raster order and running clockwise. Holes
/// are ignored. Returns an empty list for an empty mask.
pub fn trace_outer_contour(mask: &Mask) -> Vec<Point2> {
    let comp = largest_component(mask);
    let Some((sx, sy)) = comp.foreground().next() else {
        return Vec::new();
    };
    let start = (sx as i64, sy as i64);
    // The raster-order first pixel always has background to its west.
    let start_back = 0usize;
    let mut contour = vec![Point2::new(start.0 as f64, start.1 as f64)];

    let mut cur = start;
    let mut back = start_back;
    let limit = 4 * comp.count() + 8;
    for _ in 0..limit {
        let mut found = None;
        for k in 1..=8 {
            let d = (back + k) % 8;
            let (nx, ny) = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if comp.get_signed(nx, ny) {
                found = Some((d, (nx, ny)));
                break;
            }
        }
        let Some((d, next)) = found else {
            // isolated pixel
            return contour;
        };
        let prev = (d + 7) % 8;
        let prev_pos = (cur.0 + DIRS[prev].0, cur.1 + DIRS[prev].1);
        back = dir_index(prev_pos.0 - next.0, prev_pos.1 - next.1);
        cur = next;
        // Jacob's criterion: stop only when the start is re-entered from the
        // same side it was first left.
        if cur == start && back == start_back {
            break;
        }
        contour.push(Point2::new(cur.0 as f64, cur.1 as f64));
    }
    // The walk ends by stepping back onto the start; drop a duplicate tail.
    if contour.len() > 1 && contour.last() == contour.first() {
        contour.pop();
    }
    contour
}

/// Perimeter of the closed polygon.
pub fn closed_length(contour: &[Point2]) -> f64 {
    if contour.len() < 2 {
        return 0.0;
    }
    contour
        .iter()
        .zip(contour.iter().cycle().skip(1))
        .map(|(a, b)| a.distance(b))
        .sum()
}

/// `count` points spaced evenly by arc length around the closed polygon,
/// starting at `contour[0]`.
pub fn resample_closed(contour: &[Point2], count: usize) -> Vec<Point2> {
    if contour.is_empty() || count == 0 {
        return Vec::new();
    }
    let total = closed_length(contour);
    if total == 0.0 {
        return vec![contour[0]; count];
    }
    let step = total / count as f64;
    let mut out = Vec::with_capacity(count);
    let n = contour.len();
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    for i in 0..count {
        let target = i as f64 * step;
        loop {
            let a = contour[seg % n];
            let b = contour[(seg + 1) % n];
            let len = a.distance(&b);
            if target <= seg_start + len || seg + 1 >= n {
                let t = if len > 0.0 {
                    ((target - seg_start) / len).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                out.push(Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_boundary_is_traced_clockwise() {
        let mask = Mask::from_fn(6, 6, |x, y| (1..4).contains(&x) && (1..4).contains(&y));
        let c = trace_outer_contour(&mask);
        let expected: Vec<Point2> = [
            (1, 1),
            (2, 1),
            (3, 1),
            (3, 2),
            (3, 3),
            (2, 3),
            (1, 3),
            (1, 2),
        ]
        .iter()
        .map(|&(x, y)| Point2::new(x as f64, y as f64))
        .collect();
        assert_eq!(c, expected);
    }

    #[test]
    fn single_pixel_and_empty() {
        let mut m = Mask::new(4, 4);
        assert!(trace_outer_contour(&m).is_empty());
        m.set(2, 1, true);
        assert_eq!(trace_outer_contour(&m), vec![Point2::new(2.0, 1.0)]);
    }

    #[test]
    fn only_largest_component_is_traced() {
        let m = Mask::from_fn(12, 6, |x, y| {
            (x == 0 && y == 0) || ((4..9).contains(&x) && (1..5).contains(&y))
        });
        let c = trace_outer_contour(&m);
        assert_eq!(c[0], Point2::new(4.0, 1.0));
        assert!(c.iter().all(|p| p.x >= 4.0));
        // 5×4 rectangle boundary has 2·(5+4) − 4 pixels
        assert_eq!(c.len(), 14);
    }

    #[test]
    fn holes_are_ignored() {
        let m = Mask::from_fn(7, 7, |x, y| {
            (1..6).contains(&x) && (1..6).contains(&y) && !(x == 3 && y == 3)
        });
        assert_eq!(trace_outer_contour(&m).len(), 16);
    }

    #[test]
    fn resampling_is_even() {
        let sq = [
            Point2::new(0.0, 0.0),
            Point2::new(4.0, 0.0),
            Point2::new(4.0, 4.0),
            Point2::new(0.0, 4.0),
        ];
        let r = resample_closed(&sq, 8);
        assert_eq!(r.len(), 8);
        assert_eq!(r[0], Point2::new(0.0, 0.0));
        assert_eq!(r[1], Point2::new(2.0, 0.0));
        assert_eq!(r[2], Point2::new(4.0, 0.0));
        assert_eq!(r[5], Point2::new(2.0, 4.0));
        assert!((closed_length(&sq) - 16.0).abs() < 1e-12);
    }
}
