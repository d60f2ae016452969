//! Zhang–Suen thinning of the foreground (value 0) of a binary image.

use super::BinaryImage;

/// Neighbours P2..P9, clockwise from north, as `(dy, dx)`.
const RING: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

/// Reduces the foreground to an 8-connected skeleton one pixel wide by
/// alternating the two Zhang–Suen sub-iterations until nothing changes.
/// Pixels outside the image count as background.
pub fn thin(img: &BinaryImage) -> BinaryImage {
    let (h, w) = (img.height(), img.width());
    let mut fg: Vec<bool> = img.data().iter().map(|&v| v == 0).collect();
    let mut doomed = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            doomed.clear();
            for y in 0..h {
                for x in 0..w {
                    if fg[y * w + x] && removable(&fg, h, w, y, x, pass) {
                        doomed.push(y * w + x);
                    }
                }
            }
            changed |= !doomed.is_empty();
            for &i in &doomed {
                fg[i] = false;
            }
        }
        if !changed {
            break;
        }
    }
    let data = fg.iter().map(|&f| u8::from(!f)).collect();
    BinaryImage::new(h, w, data).expect("same dimensions")
}

fn removable(fg: &[bool], h: usize, w: usize, y: usize, x: usize, pass: usize) -> bool {
    let mut p = [false; 8];
    for (slot, (dy, dx)) in p.iter_mut().zip(RING) {
        let (ny, nx) = (y as isize + dy, x as isize + dx);
        *slot = ny >= 0
            && nx >= 0
            && (ny as usize) < h
            && (nx as usize) < w
            && fg[ny as usize * w + nx as usize];
    }
    let neighbours = p.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&neighbours) {
        return false;
    }
    let transitions = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if transitions != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = p;
    if pass == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}
