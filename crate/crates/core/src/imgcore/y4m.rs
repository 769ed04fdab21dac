//! Uncompressed YUV4MPEG2 streams. Only 4:2:0 and mono are accepted; chroma is dropped.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{GrayImage, ImageError, QuadFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Chroma {
    C420,
    Mono,
}

pub struct Y4mReader<R> {
    inner: R,
    width: usize,
    height: usize,
    chroma: Chroma,
    fps_num: u64,
    fps_den: u64,
    offset: usize,
    next_index: u64,
}

impl Y4mReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| ImageError::io(path, e))?;
        Self::new(BufReader::new(f))
    }
}

fn read_line<R: BufRead>(r: &mut R, offset: usize) -> Result<Option<Vec<u8>>, ImageError> {
    let mut line = Vec::new();
    let n = r
        .read_until(b'\n', &mut line)
        .map_err(|e| ImageError::parse(offset, e.to_string()))?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(ImageError::parse(offset + n, "unterminated header line"));
    }
    line.pop();
    Ok(Some(line))
}

impl<R: BufRead> Y4mReader<R> {
    pub fn new(mut inner: R) -> Result<Self, ImageError> {
        let line = read_line(&mut inner, 0)?.ok_or_else(|| ImageError::parse(0, "empty stream"))?;
        let text = String::from_utf8_lossy(&line);
        let mut tokens = text.split(' ');
        if tokens.next() != Some("YUV4MPEG2") {
            return Err(ImageError::parse(0, "missing YUV4MPEG2 signature"));
        }
        let (mut width, mut height) = (0usize, 0usize);
        let mut chroma = Chroma::C420;
        let (mut fps_num, mut fps_den) = (30u64, 1u64);
        let mut pos = 10;
        for tok in tokens {
            let bad = || ImageError::parse(pos, format!("bad header token {tok:?}"));
            match tok.as_bytes().first() {
                Some(b'W') => width = tok[1..].parse().map_err(|_| bad())?,
                Some(b'H') => height = tok[1..].parse().map_err(|_| bad())?,
                Some(b'F') => {
                    let (n, d) = tok[1..].split_once(':').ok_or_else(bad)?;
                    fps_num = n.parse().map_err(|_| bad())?;
                    fps_den = d.parse().map_err(|_| bad())?;
                    if fps_num == 0 || fps_den == 0 {
                        return Err(bad());
                    }
                }
                Some(b'C') => {
                    chroma = match &tok[1..] {
                        "420" | "420jpeg" | "420paldv" | "420mpeg2" => Chroma::C420,
                        "mono" => Chroma::Mono,
                        other => {
                            return Err(ImageError::parse(pos, format!("colorspace C{other} unsupported")))
                        }
                    }
                }
                _ => {}
            }
            pos += tok.len() + 1;
        }
        if width == 0 || height == 0 {
            return Err(ImageError::parse(0, "missing W or H"));
        }
        Ok(Self {
            inner,
            width,
            height,
            chroma,
            fps_num,
            fps_den,
            offset: line.len() + 1,
            next_index: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn chroma_len(&self) -> usize {
        match self.chroma {
            Chroma::Mono => 0,
            Chroma::C420 => 2 * self.width.div_ceil(2) * self.height.div_ceil(2),
        }
    }

    pub fn next_frame(&mut self) -> Result<Option<QuadFrame>, ImageError> {
        let Some(line) = read_line(&mut self.inner, self.offset)? else {
            return Ok(None);
        };
        if !line.starts_with(b"FRAME") {
            return Err(ImageError::parse(self.offset, "expected FRAME marker"));
        }
        self.offset += line.len() + 1;
        let mut luma = vec![0u8; self.width * self.height];
        self.inner
            .read_exact(&mut luma)
            .map_err(|_| ImageError::parse(self.offset, "truncated luma plane"))?;
        self.offset += luma.len();
        let skip = self.chroma_len();
        let copied = std::io::copy(&mut (&mut self.inner).take(skip as u64), &mut std::io::sink())
            .map_err(|e| ImageError::parse(self.offset, e.to_string()))?;
        if copied as usize != skip {
            return Err(ImageError::parse(self.offset + copied as usize, "truncated chroma planes"));
        }
        self.offset += skip;
        let index = self.next_index;
        self.next_index += 1;
        let ts = index * 1_000_000 * self.fps_den / self.fps_num;
        let img = GrayImage::from_vec(self.width, self.height, luma)?;
        QuadFrame::new(img, index, ts).map(Some)
    }
}

impl<R: BufRead> Iterator for Y4mReader<R> {
    type Item = Result<QuadFrame, ImageError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Writes frames as a `Cmono` stream at 30 fps.
pub fn write_y4m<W: Write>(mut out: W, frames: &[GrayImage]) -> std::io::Result<()> {
    let Some(first) = frames.first() else {
        return Ok(());
    };
    writeln!(out, "YUV4MPEG2 W{} H{} F30:1 Ip A1:1 Cmono", first.width(), first.height())?;
    for f in frames {
        assert!(f.same_size(first), "all frames must share dimensions");
        out.write_all(b"FRAME\n")?;
        out.write_all(f.data())?;
    }
    Ok(())
}
