use base64::Engine;

/// Small deterministic RGB PNG, base64 encoded.
pub fn tiny_png_b64(width: u32, height: u32, seed: u8) -> String {
    let img = image::RgbImage::from_fn(width, height, |x, y| {
        image::Rgb([
            (x as u8).wrapping_mul(31).wrapping_add(seed),
            (y as u8).wrapping_mul(17).wrapping_add(seed),
            seed,
        ])
    });
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).unwrap();
    base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
}
