use crate::error::{Error, Result};
use crate::fourier::{fft2c, ifft2c, ComplexImage};
use crate::sampling::Mask;
use crate::tensor::{fusion_weights, Real};

/// Soft data consistency in k-space: unsampled columns keep the prediction,
/// sampled columns become `(1 - gamma) * k_hat + gamma * k_raw`.
pub fn data_consistency<F: Real>(
    k_hat: &ComplexImage<F>,
    k_raw: &ComplexImage<F>,
    mask: &Mask,
    gamma: F,
) -> Result<ComplexImage<F>> {
    if k_hat.height() != k_raw.height() || k_hat.width() != k_raw.width() {
        return Err(Error::shape(
            "data_consistency",
            "k_raw",
            format!("{}x{}", k_hat.height(), k_hat.width()),
            &[k_raw.height(), k_raw.width()],
        ));
    }
    if mask.len() != k_hat.width() {
        return Err(Error::shape(
            "data_consistency",
            "mask",
            format!("length {}", k_hat.width()),
            &[mask.len()],
        ));
    }
    let w = k_hat.width();
    let mut out = k_hat.clone();
    for idx in 0..out.re.len() {
        if mask.is_sampled(idx % w) {
            out.re[idx] = (F::one() - gamma) * out.re[idx] + gamma * k_raw.re[idx];
            out.im[idx] = (F::one() - gamma) * out.im[idx] + gamma * k_raw.im[idx];
        }
    }
    Ok(out)
}

/// Image-domain version, `ifft2c ∘ data_consistency ∘ fft2c`, evaluated as
/// `image + ifft2c(dc(k) - k)` with `k = fft2c(image)` so that `gamma = 0`
/// returns `image` unchanged.
pub fn image_data_consistency<F: Real>(
    image: &ComplexImage<F>,
    k_raw: &ComplexImage<F>,
    mask: &Mask,
    gamma: F,
) -> Result<ComplexImage<F>> {
    let k = fft2c(image);
    let mut corr = data_consistency(&k, k_raw, mask, gamma)?;
    for (c, v) in corr.re.iter_mut().zip(&k.re).chain(corr.im.iter_mut().zip(&k.im)) {
        *c = *c - *v;
    }
    let corr = ifft2c(&corr);
    let mut out = image.clone();
    for (o, c) in out.re.iter_mut().zip(&corr.re).chain(out.im.iter_mut().zip(&corr.im)) {
        *o = *o + *c;
    }
    Ok(out)
}

/// `A = A_v / (1 + mu) + mu / (1 + mu) * A_k`.
pub fn fuse<F: Real>(a_v: &[F], a_k: &[F], mu: F) -> Result<Vec<F>> {
    if a_v.len() != a_k.len() {
        return Err(Error::shape("fuse", "a_k", format!("{} elements", a_v.len()), &[a_k.len()]));
    }
    let (wv, wk) = fusion_weights(mu)?;
    Ok(a_v.iter().zip(a_k).map(|(&v, &k)| wv * v + wk * k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::Domain;

    fn img(v: f64) -> ComplexImage<f64> {
        ComplexImage::new(2, 4, vec![v; 8], vec![0.0; 8], Domain::KSpace).unwrap()
    }

    #[test]
    fn half_gamma_midpoint() {
        let mask = Mask::from_lines(vec![true, false, true, false]).unwrap();
        let out = data_consistency(&img(2.0), &img(1.0), &mask, 0.5).unwrap();
        assert_eq!(out.re[0], 1.5);
        assert_eq!(out.re[1], 2.0);
    }

    #[test]
    fn gamma_extremes_are_exact() {
        let mask = Mask::from_lines(vec![true, false, true, false]).unwrap();
        let k = ComplexImage::<f64>::new(2, 4, vec![0.1, 0.7, -0.3, 1e-3, 2.5, 0.2, 0.9, -4.0], vec![0.3; 8], Domain::KSpace).unwrap();
        let raw = ComplexImage::new(2, 4, vec![1.0 / 3.0; 8], vec![-0.7; 8], Domain::KSpace).unwrap();
        let same = data_consistency(&k, &raw, &mask, 0.0).unwrap();
        assert_eq!(same.re, k.re);
        let hard = data_consistency(&k, &raw, &mask, 1.0).unwrap();
        for i in 0..8 {
            let src = if mask.is_sampled(i % 4) { &raw } else { &k };
            assert_eq!(hard.re[i], src.re[i]);
            assert_eq!(hard.im[i], src.im[i]);
        }
        let mut image = k.clone();
        image.domain = Domain::Image;
        let out = image_data_consistency(&image, &raw, &mask, 0.0).unwrap();
        assert_eq!(out.re, image.re);
        assert_eq!(out.im, image.im);
    }

    #[test]
    fn image_dc_matches_composition() {
        let mask = Mask::from_lines(vec![true, false, false, true]).unwrap();
        let image = ComplexImage::<f64>::new(2, 4, vec![0.5, -0.1, 0.3, 0.9, 0.0, 0.2, -0.6, 0.4], vec![0.1; 8], Domain::Image).unwrap();
        let raw = ComplexImage::new(2, 4, vec![0.2; 8], vec![-0.3; 8], Domain::KSpace).unwrap();
        let direct = ifft2c(&data_consistency(&fft2c(&image), &raw, &mask, 0.6).unwrap());
        let ours = image_data_consistency(&image, &raw, &mask, 0.6).unwrap();
        for i in 0..8 {
            assert!((direct.re[i] - ours.re[i]).abs() < 1e-14);
            assert!((direct.im[i] - ours.im[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse(&[1.0, 2.0], &[5.0, 7.0], 0.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(fuse(&[0.0], &[2.0], 1.0).unwrap(), vec![1.0]);
        assert_eq!(fuse(&[1.0], &[5.0], 3.0).unwrap(), vec![4.0]);
        assert!(fuse(&[1.0], &[5.0], -1.0).is_err());
    }
}
