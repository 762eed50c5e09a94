use std::collections::VecDeque;

use super::types::BinaryMask;

/// Largest 8-connected component of set cells, or `None` for an empty mask.
///
/// Components are discovered in row-major order of their first cell, so on a
/// size tie the component whose first (top-most, then left-most) cell comes
/// first wins.
pub fn max_connected_component(mask: &BinaryMask) -> Option<BinaryMask> {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut best: Option<Vec<usize>> = None;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.bits()[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask.bits()[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
            best = Some(comp);
        }
    }
    best.map(|cells| {
        let mut out = BinaryMask::empty(h, w);
        for i in cells {
            out.set(i / w, i % w, true);
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&[u8]]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::new(h, w, rows.iter().flat_map(|r| r.iter().map(|&b| b == 1)).collect()).unwrap()
    }

    #[test]
    fn picks_largest() {
        let m = mask(&[&[1, 1, 1], &[0, 0, 1], &[1, 0, 0]]);
        let cc = max_connected_component(&m).unwrap();
        let cells: Vec<_> = cc.cells().collect();
        assert_eq!(cells, vec![(0, 0), (0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn diagonal_cells_are_joined() {
        let m = mask(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]);
        assert_eq!(max_connected_component(&m).unwrap().count(), 3);
    }

    #[test]
    fn single_and_empty() {
        let m = mask(&[&[0, 0], &[0, 1]]);
        assert_eq!(max_connected_component(&m).unwrap(), m);
        assert!(max_connected_component(&mask(&[&[0, 0], &[0, 0]])).is_none());
    }

    #[test]
    fn tie_goes_to_first_in_row_major() {
        let m = mask(&[&[0, 0, 1], &[1, 0, 0], &[1, 0, 1]]);
        // {(0,2)} size 1, {(1,0),(2,0)} size 2, {(2,2)} size 1 -> size 2 wins
        assert_eq!(max_connected_component(&m).unwrap().count(), 2);
        let m = mask(&[&[0, 0, 1], &[0, 0, 0], &[1, 0, 0]]);
        let cc = max_connected_component(&m).unwrap();
        assert!(cc.get(0, 2) && !cc.get(2, 0));
    }
}
