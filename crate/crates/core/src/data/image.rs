use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// 8-bit RGB image, interleaved row-major samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// Round half away from zero after clamping to [0, 1].
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("image dims {width}x{height} must be positive")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "{width}x{height} RGB image needs {} samples, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.iter().copied().cycle().take(width * height * 3).collect())
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Result<Image> {
        if left + width > self.width || top + height > self.height {
            return Err(Error::Dim(format!(
                "crop {width}x{height} at ({left},{top}) outside {}x{}",
                self.width, self.height
            )));
        }
        Image::from_fn(width, height, |x, y| self.pixel(left + x, top + y))
    }

    /// [1, 3, H, W] tensor with samples scaled to [0, 1].
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn(vec![1, 3, h, w], |i| {
            let (c, p) = (i / (w * h), i % (w * h));
            T::lit(self.data[p * 3 + c] as f64 / 255.0)
        })
    }

    /// Inverse of [`Image::to_tensor`] for item `index` of an [N, 3, H, W] batch.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, index: usize) -> Result<Image> {
        let (n, c, h, w) = t.dims4()?;
        if c != 3 || index >= n {
            return Err(Error::Dim(format!("cannot take RGB image {index} from {:?}", t.shape())));
        }
        let item = &t.data()[index * 3 * h * w..(index + 1) * 3 * h * w];
        Image::from_fn(w, h, |x, y| {
            let p = y * w + x;
            [0, 1, 2].map(|c| quantize(item[c * h * w + p].as_f64()))
        })
    }

    pub fn read(path: &Path) -> Result<Image> {
        match extension(path).as_str() {
            "ppm" => decode_ppm(&fs::read(path)?),
            "png" => read_png(path),
            ext => Err(Error::Format(format!("{}: unsupported image format '{ext}'", path.display()))),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        match extension(path).as_str() {
            "ppm" => {
                fs::write(path, self.encode_ppm())?;
                Ok(())
            }
            "png" => write_png(self, path),
            ext => Err(Error::Format(format!("{}: unsupported image format '{ext}'", path.display()))),
        }
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn is_image_path(path: &Path) -> bool {
    matches!(extension(path).as_str(), "ppm" | "png")
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let bad = |msg: &str| Error::Format(format!("ppm: {msg}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad(&format!("magic '{}' is not P6", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad header number '{s}'")));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval} unsupported (need 255)")));
    }
    if pos >= bytes.len() {
        return Err(bad("missing payload"));
    }
    pos += 1;
    let need = w * h * 3;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(bad(&format!("payload truncated: {} of {need} bytes", payload.len())));
    }
    Image::new(w, h, payload[..need].to_vec())
}

fn read_png(path: &Path) -> Result<Image> {
    let file = fs::File::open(path)?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    let data: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => px.to_vec(),
        png::ColorType::Rgba => px.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => px.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => px.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::Format("png: unexpanded palette".into())),
    };
    Image::new(w, h, data)
}

fn write_png(img: &Image, path: &Path) -> Result<()> {
    let file = BufWriter::new(fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
    writer
        .write_image_data(&img.data)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    writer.finish().map_err(|e| Error::Format(format!("png: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_pixel() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0xFF, 0, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.encode_ppm(), bytes);
    }

    #[test]
    fn truncated_and_bad_headers() {
        let mut bytes = b"P6\n4 4\n255\n".to_vec();
        bytes.extend_from_slice(&[7; 9]);
        assert!(matches!(decode_ppm(&bytes), Err(Error::Format(_))));
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n1 2 3").is_err());
        assert!(decode_ppm(b"P6\n1").is_err());
    }

    #[test]
    fn float_round_trip_is_exact() {
        let img = Image::from_fn(5, 3, |x, y| [(x * 50) as u8, (y * 80) as u8, 255]).unwrap();
        let back = Image::from_tensor(&img.to_tensor::<f32>(), 0).unwrap();
        assert_eq!(back, img);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(-3.0), 0);
    }

    #[test]
    fn png_and_ppm_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 4, |x, y| [x as u8 * 30, y as u8 * 60, (x * y) as u8]).unwrap();
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            img.write(&p).unwrap();
            assert_eq!(Image::read(&p).unwrap(), img);
        }
        assert!(img.write(&dir.path().join("a.bmp")).is_err());
    }
}
