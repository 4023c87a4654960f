use super::ImageTensorInput;

/// Explicit RGB skin-colour rule on 0..=255 channel values.
pub fn is_skin(r: f64, g: f64, b: f64) -> bool {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    r > 95.0 && g > 40.0 && b > 20.0 && max - min > 15.0 && (r - g).abs() > 15.0 && r > g && r > b
}

/// Counts 8-connected skin-coloured regions covering at least 1% of the
/// image. A cheap stand-in when no face count is supplied with the data.
pub fn heuristic_face_count(img: &ImageTensorInput) -> f64 {
    let s = img.side;
    let mask: Vec<bool> = (0..s * s)
        .map(|i| {
            let p = &img.data[i * 3..i * 3 + 3];
            is_skin(p[0] as f64 * 255.0, p[1] as f64 * 255.0, p[2] as f64 * 255.0)
        })
        .collect();
    let min_area = (s * s).div_ceil(100);
    let mut seen = vec![false; s * s];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..s * s {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (y, x) = ((i / s) as isize, (i % s) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= s as isize || nx >= s as isize {
                        continue;
                    }
                    let j = ny as usize * s + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area {
            count += 1;
        }
    }
    count as f64
}
