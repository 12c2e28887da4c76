use crate::mask::BinaryMask;

/// Neighbours `P2..P9` of `(x, y)`, clockwise from north. Out of bounds is background.
fn neighbours(m: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let (x, y) = (x as isize, y as isize);
    [
        m.get_or_false(x, y - 1),
        m.get_or_false(x + 1, y - 1),
        m.get_or_false(x + 1, y),
        m.get_or_false(x + 1, y + 1),
        m.get_or_false(x, y + 1),
        m.get_or_false(x - 1, y + 1),
        m.get_or_false(x - 1, y),
        m.get_or_false(x - 1, y - 1),
    ]
}

fn removable(p: &[bool; 8], first_pass: bool) -> bool {
    let b = p.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = *p;
    if first_pass {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// 8-connected component labels (0 = background, components numbered from 1)
/// and the number of components.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, usize) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if mask.get_or_false(nx, ny) {
                        let j = ny as usize * w + nx as usize;
                        if labels[j] == 0 {
                            labels[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Zhang-Suen thinning to a one-pixel-wide 8-connected skeleton.
///
/// Runs the two sub-iterations until a full iteration removes nothing.
/// Parallel deletion would erase some tiny components outright (a 2x2
/// square loses all four pixels at once); when every pixel of a component is
/// flagged in the same sub-iteration, its first pixel in raster order is kept.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut cur = mask.clone();
    let (w, h) = mask.dims();
    let mut flagged = Vec::new();
    loop {
        let mut changed = false;
        for first_pass in [true, false] {
            flagged.clear();
            for y in 0..h {
                for x in 0..w {
                    if cur.get(x, y) && removable(&neighbours(&cur, x, y), first_pass) {
                        flagged.push(y * w + x);
                    }
                }
            }
            if flagged.is_empty() {
                continue;
            }
            keep_last_pixels(&cur, &mut flagged);
            for &i in &flagged {
                cur.set(i % w, i / w, false);
            }
            changed |= !flagged.is_empty();
        }
        if !changed {
            return cur;
        }
    }
}

/// Drops from `flagged` the first pixel of every component that would otherwise vanish.
fn keep_last_pixels(cur: &BinaryMask, flagged: &mut Vec<usize>) {
    let (labels, count) = label_components(cur);
    let mut size = vec![0usize; count + 1];
    for &l in &labels {
        size[l as usize] += 1;
    }
    let mut hit = vec![0usize; count + 1];
    for &i in flagged.iter() {
        hit[labels[i] as usize] += 1;
    }
    let mut spared = vec![false; count + 1];
    // flagged is in raster order, so the first hit of a doomed component is its first pixel
    flagged.retain(|&i| {
        let l = labels[i] as usize;
        if hit[l] == size[l] && !spared[l] {
            spared[l] = true;
            false
        } else {
            true
        }
    });
}
