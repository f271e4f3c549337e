use alloc::vec;
use alloc::vec::Vec;

use super::FaceBox;

/// Two boxes are similar when every edge differs by at most
/// `eps * (min width + min height) / 2`.
fn similar(a: &FaceBox, b: &FaceBox, eps: f64) -> bool {
    let delta = eps * (a.w.min(b.w) as f64 + a.h.min(b.h) as f64) * 0.5;
    let close = |p: u32, q: u32| (p as f64 - q as f64).abs() <= delta;
    close(a.x, b.x)
        && close(a.y, b.y)
        && close(a.x + a.w, b.x + b.w)
        && close(a.y + a.h, b.y + b.h)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Partitions raw detections into similarity classes (transitive closure of
/// [`similar`]) and replaces every class with more than `min_neighbors`
/// members by its averaged box. Classes come out in order of first member.
pub fn group_boxes(raw: &[FaceBox], min_neighbors: u32, eps: f64) -> Vec<FaceBox> {
    let n = raw.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if similar(&raw[i], &raw[j], eps) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    // accumulate (x, y, w, h, count, best score) per root
    let mut acc = vec![(0u64, 0u64, 0u64, 0u64, 0u32, f64::NEG_INFINITY); n];
    let mut order = Vec::new();
    for (i, b) in raw.iter().enumerate() {
        let r = find(&mut parent, i);
        let a = &mut acc[r];
        if a.4 == 0 {
            order.push(r);
        }
        a.0 += b.x as u64;
        a.1 += b.y as u64;
        a.2 += b.w as u64;
        a.3 += b.h as u64;
        a.4 += 1;
        a.5 = a.5.max(b.score);
    }

    order
        .into_iter()
        .filter_map(|r| {
            let (x, y, w, h, count, score) = acc[r];
            if count <= min_neighbors {
                return None;
            }
            let mean = |s: u64| ((2 * s + count as u64) / (2 * count as u64)) as u32;
            Some(FaceBox {
                x: mean(x),
                y: mean(y),
                w: mean(w),
                h: mean(h),
                neighbors: count,
                score,
            })
        })
        .collect()
}

/// Intersection over union of two boxes.
pub fn iou(a: &FaceBox, b: &FaceBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x)) as f64;
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y)) as f64;
    let inter = ix * iy;
    let union = a.area() as f64 + b.area() as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
