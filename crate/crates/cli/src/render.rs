//! Figure-style outputs: a turbo depth colormap and a label overlay.

use event_spectra::image::{DepthMap, ImageRgb, LabelMap, CLASS_BRANCHES, CLASS_LEAVES};
use event_spectra::Result;

/// Polynomial fit of the turbo colormap, `t` in `[0, 1]`.
pub fn turbo(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = 0.13572138 + t * (4.61539260 + t * (-42.66032258 + t * (132.13108234 + t * (-152.94239396 + t * 59.28637943))));
    let g = 0.09140261 + t * (2.19418839 + t * (4.84296658 + t * (-14.18503333 + t * (4.27729857 + t * 2.82956604))));
    let b = 0.10667330 + t * (12.64194608 + t * (-60.58204836 + t * (110.36276771 + t * (-89.90310912 + t * 27.34824973))));
    [r, g, b].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Near is blue, far is red, over the valid depth range. Invalid pixels are black.
pub fn render_depth_colormap(depth: &DepthMap) -> Result<ImageRgb> {
    let vals = depth.valid_values();
    let lo = vals.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let (w, h) = depth.dims();
    ImageRgb::from_fn(w, h, |x, y| match depth.at(x, y) {
        None => [0; 3],
        Some(z) if hi > lo => turbo((z as f64 - lo) / (hi - lo)),
        Some(_) => turbo(0.5),
    })
}

const BRANCH_RED: [u8; 3] = [255, 0, 0];
const LEAF_BLUE: [u8; 3] = [0, 0, 255];

/// Branches tinted red and leaves blue at 50 % opacity; background untouched.
pub fn render_overlay(rgb: &ImageRgb, labels: &LabelMap) -> Result<ImageRgb> {
    rgb.ensure_same_dims(labels.image())?;
    let (w, h) = rgb.dims();
    ImageRgb::from_fn(w, h, |x, y| {
        let p = *rgb.get(x, y);
        let tint = match labels.get(x, y) {
            CLASS_BRANCHES => BRANCH_RED,
            CLASS_LEAVES => LEAF_BLUE,
            _ => return p,
        };
        [0, 1, 2].map(|c| (p[c] as u16 + tint[c] as u16).div_ceil(2) as u8)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use event_spectra::image::{Image, Mask};

    #[test]
    fn turbo_runs_blue_to_red() {
        let lo = turbo(0.15);
        let hi = turbo(0.9);
        assert!(lo[2] > lo[0], "{lo:?}");
        assert!(hi[0] > hi[2], "{hi:?}");
    }

    #[test]
    fn invalid_depth_is_black() {
        let d = DepthMap::invalid(4, 3).unwrap();
        assert!(render_depth_colormap(&d).unwrap().data().iter().all(|p| *p == [0; 3]));
    }

    #[test]
    fn two_depths_two_colors() {
        let d = DepthMap::from_values(Image::from_fn(4, 2, |x, _| if x < 2 { 1.0 } else { 2.0 }).unwrap());
        let img = render_depth_colormap(&d).unwrap();
        let mut colors: Vec<[u8; 3]> = img.data().to_vec();
        colors.sort();
        colors.dedup();
        assert_eq!(colors, {
            let mut c = vec![turbo(0.0), turbo(1.0)];
            c.sort();
            c
        });
        let masked = DepthMap::new(d.depth().clone(), Mask::from_fn(4, 2, |x, _| x != 0).unwrap()).unwrap();
        assert_eq!(*render_depth_colormap(&masked).unwrap().get(0, 0), [0; 3]);
    }

    #[test]
    fn overlay_blends_half() {
        let rgb = ImageRgb::filled(3, 1, [100, 50, 0]).unwrap();
        let labels = LabelMap::new(Image::from_vec(3, 1, vec![0, 1, 2]).unwrap()).unwrap();
        let out = render_overlay(&rgb, &labels).unwrap();
        assert_eq!(out.data(), &[[100, 50, 0], [50, 25, 128], [178, 25, 0]]);
        let empty = LabelMap::filled(3, 1, 0).unwrap();
        assert_eq!(render_overlay(&rgb, &empty).unwrap(), rgb);
    }
}
