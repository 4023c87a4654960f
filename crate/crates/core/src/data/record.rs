use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{decode_path, LoadedImage, RgbImage};
use crate::model::{FAKE, REAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Class index: real is `[1, 0]`, fake is `[0, 1]`.
    pub fn index(self) -> usize {
        match self {
            Label::Real => REAL,
            Label::Fake => FAKE,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == FAKE {
            Label::Fake
        } else {
            Label::Real
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(Error::Data(format!("label must be `real` or `fake`, got `{other}`"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    Path(PathBuf),
    /// Generated in memory, e.g. by the synthetic corpus.
    InMemory(Arc<RgbImage>),
    Missing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewsRecord {
    pub id: String,
    /// Empty when the article has no title.
    pub title: String,
    pub text: String,
    pub image: ImageSource,
    pub face_count: Option<f64>,
    pub label: Label,
}

impl NewsRecord {
    pub fn image_missing(&self) -> bool {
        self.image == ImageSource::Missing
    }

    /// Decodes and resizes the image; missing or undecodable files give the
    /// all-zero tensor with the missing flag set.
    pub fn load_image(&self, side: usize) -> LoadedImage {
        match &self.image {
            ImageSource::Missing => LoadedImage::missing(side),
            ImageSource::InMemory(img) => LoadedImage::from_raster(img, side),
            ImageSource::Path(p) => match decode_path(p) {
                Ok(img) => LoadedImage::from_raster(&img, side),
                Err(e) => {
                    log::warn!("record {}: {e}; using a blank image", self.id);
                    LoadedImage::missing(side)
                }
            },
        }
    }
}

/// Records plus what was dropped on the way in.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub records: Vec<NewsRecord>,
    pub rows: usize,
    pub malformed: usize,
    pub missing_images: usize,
}

const COLUMNS: [&str; 6] = ["id", "title", "text", "image", "face_count", "label"];

/// Maximum share of malformed rows before the file is rejected outright.
const MAX_MALFORMED_FRACTION: f64 = 0.10;

fn normalize_title(raw: &str) -> String {
    let t = raw.trim();
    if t.eq_ignore_ascii_case("notitle") {
        String::new()
    } else {
        t.to_string()
    }
}

/// Reads a `id,title,text,image,face_count,label` CSV. Image paths are
/// resolved against `image_root`. Malformed rows (missing id or label,
/// bad face count, duplicate id, wrong field count) are skipped and counted.
pub fn load_dataset(csv_path: impl AsRef<Path>, image_root: Option<&Path>) -> Result<LoadedDataset> {
    let csv_path = csv_path.as_ref();
    let file = std::fs::File::open(csv_path).map_err(|e| Error::Data(format!("cannot read {}: {e}", csv_path.display())))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let mut col = [0usize; 6];
    for (slot, name) in col.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Data(format!("{}: missing column `{name}` (expected {})", csv_path.display(), COLUMNS.join(","))))?;
    }
    let root = image_root.map(Path::to_path_buf).unwrap_or_else(|| csv_path.parent().unwrap_or(Path::new(".")).to_path_buf());

    let mut out = LoadedDataset {
        records: Vec::new(),
        rows: 0,
        malformed: 0,
        missing_images: 0,
    };
    let mut ids = HashSet::new();
    for row in reader.records() {
        out.rows += 1;
        let line = out.rows + 1;
        let row = match row {
            Ok(r) if r.len() == headers.len() => r,
            Ok(r) => {
                log::warn!("line {line}: expected {} fields, found {}", headers.len(), r.len());
                out.malformed += 1;
                continue;
            }
            Err(e) => {
                log::warn!("line {line}: {e}");
                out.malformed += 1;
                continue;
            }
        };
        let field = |i: usize| row.get(col[i]).unwrap_or("");
        let parsed = (|| -> Result<NewsRecord> {
            let id = field(0).trim();
            if id.is_empty() {
                return Err(Error::Data("empty id".into()));
            }
            if !ids.insert(id.to_string()) {
                return Err(Error::Data(format!("duplicate id `{id}`")));
            }
            let label: Label = field(5).parse()?;
            let face_count = match field(4).trim() {
                "" => None,
                s => match s.parse::<f64>() {
                    Ok(v) if v.is_finite() && v >= 0.0 => Some(v),
                    _ => return Err(Error::Data(format!("bad face_count `{s}`"))),
                },
            };
            let image = match field(3).trim() {
                "" => ImageSource::Missing,
                rel => {
                    let p = root.join(rel);
                    if p.is_file() {
                        ImageSource::Path(p)
                    } else {
                        ImageSource::Missing
                    }
                }
            };
            Ok(NewsRecord {
                id: id.to_string(),
                title: normalize_title(field(1)),
                text: field(2).to_string(),
                image,
                face_count,
                label,
            })
        })();
        match parsed {
            Ok(r) => {
                if r.image_missing() {
                    out.missing_images += 1;
                }
                out.records.push(r);
            }
            Err(e) => {
                log::warn!("line {line}: {e}");
                out.malformed += 1;
            }
        }
    }
    if out.malformed > 0 {
        log::warn!("{}: skipped {} malformed row(s) of {}", csv_path.display(), out.malformed, out.rows);
    }
    if out.rows > 0 && out.malformed as f64 > MAX_MALFORMED_FRACTION * out.rows as f64 {
        return Err(Error::Data(format!(
            "{}: {} of {} rows are malformed (more than 10%); check the column layout",
            csv_path.display(),
            out.malformed,
            out.rows
        )));
    }
    Ok(out)
}

/// Writes records in the loader's CSV layout. In-memory images are saved as
/// PPM files under `image_dir`, named by record id.
pub fn write_dataset(records: &[NewsRecord], csv_path: impl AsRef<Path>, image_dir: Option<&Path>) -> Result<()> {
    let csv_path = csv_path.as_ref();
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(COLUMNS)?;
    let base = csv_path.parent().unwrap_or(Path::new("."));
    for r in records {
        let image = match (&r.image, image_dir) {
            (ImageSource::InMemory(img), Some(dir)) => {
                std::fs::create_dir_all(dir)?;
                let file = dir.join(format!("{}.ppm", r.id));
                std::fs::write(&file, crate::image::encode_ppm(img))?;
                file.strip_prefix(base).unwrap_or(&file).to_string_lossy().into_owned()
            }
            (ImageSource::Path(p), _) => p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned(),
            _ => String::new(),
        };
        let faces = r.face_count.map(|f| f.to_string()).unwrap_or_default();
        w.write_record([r.id.as_str(), r.title.as_str(), r.text.as_str(), image.as_str(), faces.as_str(), &r.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_row_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.ppm"), crate::image::encode_ppm(&RgbImage::filled(4, 2, [1, 2, 3]))).unwrap();
        let csv = write(
            dir.path(),
            "d.csv",
            "id,title,text,image,face_count,label\n\
             1,Hello,\"Body, with comma\",a.ppm,2,real\n\
             2,notitle,Second body,,,fake\n\
             3,,\"Quote \"\"inside\"\"\",missing.jpg,0.5,FAKE\n",
        );
        let d = load_dataset(&csv, None).unwrap();
        assert_eq!((d.rows, d.malformed, d.missing_images), (3, 0, 2));
        let r = &d.records;
        assert_eq!(r[0].title, "Hello");
        assert_eq!(r[0].text, "Body, with comma");
        assert_eq!(r[0].image, ImageSource::Path(dir.path().join("a.ppm")));
        assert_eq!(r[0].face_count, Some(2.0));
        assert_eq!(r[0].label, Label::Real);
        assert_eq!(r[1].title, "");
        assert!(r[1].image_missing());
        assert_eq!(r[2].text, "Quote \"inside\"");
        assert!(r[2].image_missing());
        assert_eq!(r[2].label, Label::Fake);
        assert_eq!(r[0].load_image(10).original_dims, Some((4, 2)));
        assert!(r[2].load_image(10).missing);
    }

    #[test]
    fn missing_label_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("id,title,text,image,face_count,label\n");
        for i in 0..10 {
            body.push_str(&format!("{i},t,x,,,real\n"));
        }
        body.push_str("10,t,x,,,\n");
        let d = load_dataset(write(dir.path(), "d.csv", &body), None).unwrap();
        assert_eq!(d.records.len(), 10);
        assert_eq!(d.malformed, 1);
    }

    #[test]
    fn too_many_malformed_rows_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let body = "id,title,text,image,face_count,label\n1,t,x,,,real\n2,t,x,,,maybe\n1,t,x,,,fake\n";
        assert!(matches!(load_dataset(write(dir.path(), "d.csv", body), None), Err(Error::Data(_))));
        let body = "a,b,c\n1,2,3\n";
        assert!(load_dataset(write(dir.path(), "e.csv", body), None).unwrap_err().to_string().contains("missing column"));
        assert!(load_dataset(dir.path().join("nope.csv"), None).is_err());
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            NewsRecord {
                id: "a".into(),
                title: "T, with comma".into(),
                text: "line one\nline \"two\"".into(),
                image: ImageSource::InMemory(Arc::new(RgbImage::filled(3, 3, [9, 9, 9]))),
                face_count: Some(1.0),
                label: Label::Fake,
            },
            NewsRecord {
                id: "b".into(),
                title: String::new(),
                text: "x".into(),
                image: ImageSource::Missing,
                face_count: None,
                label: Label::Real,
            },
        ];
        let csv = dir.path().join("out.csv");
        write_dataset(&records, &csv, Some(&dir.path().join("img"))).unwrap();
        let back = load_dataset(&csv, None).unwrap().records;
        assert_eq!(back[0].title, records[0].title);
        assert_eq!(back[0].text, records[0].text);
        assert_eq!(back[0].image, ImageSource::Path(dir.path().join("img").join("a.ppm")));
        assert_eq!(back[1], records[1]);
    }
}
