//! Haar cascades in the XML interchange format used by common vision
//! toolkits, in both the old (`<size>`, `<trees>`) and new (`<cascade>`,
//! `<weakClassifiers>`, shared `<features>`) layouts.
//!
//! Only decision stumps over upright features are representable; deeper
//! trees and tilted features are rejected as schema errors. In both layouts
//! the left leaf is taken when the normalised feature value is below the
//! node threshold, which maps to [`WeakClassifier::fail_value`].

use std::fmt::Write;

use mirror_core::detect::{CascadeError, CascadeModel, HaarRect, Stage, WeakClassifier};
use roxmltree::{Document, Node};

pub fn load_cascade(bytes: &[u8]) -> Result<CascadeModel, CascadeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CascadeError::Parse(e.to_string()))?;
    parse_cascade(text)
}

pub fn parse_cascade(text: &str) -> Result<CascadeModel, CascadeError> {
    let doc = Document::parse(text).map_err(|e| CascadeError::Parse(e.to_string()))?;
    let root = doc.root_element();
    let cascade = if root.has_tag_name("opencv_storage") {
        elements(root).next().ok_or_else(|| schema("empty <opencv_storage>"))?
    } else {
        root
    };
    if child(cascade, "stageType").is_some() || child(cascade, "features").is_some() {
        parse_new(cascade)
    } else if child(cascade, "size").is_some() {
        parse_old(cascade)
    } else {
        Err(schema("neither old-style <size> nor new-style <features> found"))
    }
}

fn parse_new(cascade: Node) -> Result<CascadeModel, CascadeError> {
    if let Some(kind) = child(cascade, "stageType") {
        if text(kind) != "BOOST" {
            return Err(schema(&format!("unsupported stageType {}", text(kind))));
        }
    }
    if let Some(kind) = child(cascade, "featureType") {
        if text(kind) != "HAAR" {
            return Err(schema(&format!("unsupported featureType {}", text(kind))));
        }
    }
    let width = number::<u32>(required(cascade, "width")?)?;
    let height = number::<u32>(required(cascade, "height")?)?;

    let features = items(required(cascade, "features")?)
        .map(|f| feature_rects(f))
        .collect::<Result<Vec<_>, _>>()?;

    let mut stages = Vec::new();
    for stage in items(required(cascade, "stages")?) {
        let threshold = number(required(stage, "stageThreshold")?)?;
        let mut weak_classifiers = Vec::new();
        for weak in items(required(stage, "weakClassifiers")?) {
            let nodes: Vec<f64> = numbers(required(weak, "internalNodes")?)?;
            let leaves: Vec<f64> = numbers(required(weak, "leafValues")?)?;
            if nodes.len() != 4 || leaves.len() != 2 {
                return Err(schema("only single-split weak classifiers are supported"));
            }
            let index = nodes[2];
            if index < 0.0 || index.fract() != 0.0 || index as usize >= features.len() {
                return Err(schema(&format!("feature index {index} out of range")));
            }
            weak_classifiers.push(WeakClassifier {
                rects: features[index as usize].clone(),
                node_threshold: nodes[3],
                fail_value: leaves[0],
                pass_value: leaves[1],
            });
        }
        stages.push(Stage {
            threshold,
            weak_classifiers,
        });
    }
    CascadeModel::new(width, height, stages)
}

fn parse_old(cascade: Node) -> Result<CascadeModel, CascadeError> {
    let size: Vec<u32> = numbers(required(cascade, "size")?)?;
    let [width, height] = size[..] else {
        return Err(schema("<size> must hold two numbers"));
    };
    let mut stages = Vec::new();
    for stage in items(required(cascade, "stages")?) {
        let threshold = number(required(stage, "stage_threshold")?)?;
        let mut weak_classifiers = Vec::new();
        for tree in items(required(stage, "trees")?) {
            let mut nodes = items(tree);
            let node = nodes.next().ok_or_else(|| schema("empty tree"))?;
            if nodes.next().is_some() || child(node, "left_node").is_some() || child(node, "right_node").is_some() {
                return Err(schema("only single-node trees are supported"));
            }
            weak_classifiers.push(WeakClassifier {
                rects: feature_rects(required(node, "feature")?)?,
                node_threshold: number(required(node, "threshold")?)?,
                fail_value: number(required(node, "left_val")?)?,
                pass_value: number(required(node, "right_val")?)?,
            });
        }
        stages.push(Stage {
            threshold,
            weak_classifiers,
        });
    }
    CascadeModel::new(width, height, stages)
}

fn feature_rects(feature: Node) -> Result<Vec<HaarRect>, CascadeError> {
    if let Some(tilted) = child(feature, "tilted") {
        if number::<i64>(tilted)? != 0 {
            return Err(schema("tilted features are not supported"));
        }
    }
    items(required(feature, "rects")?)
        .map(|r| {
            let v: Vec<f64> = numbers(r)?;
            let [x, y, w, h, weight] = v[..] else {
                return Err(schema("a rectangle needs x y w h weight"));
            };
            let coord = |c: f64| {
                if c >= 0.0 && c.fract() == 0.0 && c <= u32::MAX as f64 {
                    Ok(c as u32)
                } else {
                    Err(schema(&format!("rectangle coordinate {c} is not a pixel index")))
                }
            };
            Ok(HaarRect {
                x: coord(x)?,
                y: coord(y)?,
                w: coord(w)?,
                h: coord(h)?,
                weight,
            })
        })
        .collect()
}

/// New-style XML for `model`, with one feature entry per weak classifier.
pub fn write_cascade(model: &CascadeModel) -> String {
    let mut out = String::new();
    let mut features = Vec::new();
    out.push_str("<?xml version=\"1.0\"?>\n<opencv_storage>\n<cascade>\n");
    out.push_str("  <stageType>BOOST</stageType>\n  <featureType>HAAR</featureType>\n");
    let _ = writeln!(out, "  <height>{}</height>\n  <width>{}</width>", model.window_h(), model.window_w());
    let _ = writeln!(out, "  <stageNum>{}</stageNum>\n  <stages>", model.stages().len());
    for stage in model.stages() {
        let _ = writeln!(out, "    <_>\n      <maxWeakCount>{}</maxWeakCount>", stage.weak_classifiers.len());
        let _ = writeln!(out, "      <stageThreshold>{:?}</stageThreshold>\n      <weakClassifiers>", stage.threshold);
        for weak in &stage.weak_classifiers {
            let _ = writeln!(
                out,
                "        <_>\n          <internalNodes>0 -1 {} {:?}</internalNodes>\n          <leafValues>{:?} {:?}</leafValues></_>",
                features.len(),
                weak.node_threshold,
                weak.fail_value,
                weak.pass_value
            );
            features.push(&weak.rects);
        }
        out.push_str("      </weakClassifiers></_>\n");
    }
    out.push_str("  </stages>\n  <features>\n");
    for rects in features {
        out.push_str("    <_>\n      <rects>\n");
        for r in rects {
            let _ = writeln!(out, "        <_>{} {} {} {} {:?}</_>", r.x, r.y, r.w, r.h, r.weight);
        }
        out.push_str("      </rects>\n      <tilted>0</tilted></_>\n");
    }
    out.push_str("  </features>\n</cascade>\n</opencv_storage>\n");
    out
}

fn schema(msg: &str) -> CascadeError {
    CascadeError::Schema(msg.to_string())
}

fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(Node::is_element)
}

/// The `<_>` entries of a sequence node.
fn items<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    elements(node).filter(|n| n.has_tag_name("_"))
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    elements(node).find(|n| n.has_tag_name(name))
}

fn required<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Result<Node<'a, 'i>, CascadeError> {
    child(node, name).ok_or_else(|| schema(&format!("<{}> is missing <{name}>", node.tag_name().name())))
}

fn text<'a>(node: Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn number<T: std::str::FromStr>(node: Node) -> Result<T, CascadeError> {
    let t = text(node);
    t.parse()
        .map_err(|_| schema(&format!("<{}> holds {t:?}, expected a number", node.tag_name().name())))
}

/// Whitespace-separated numbers of a node; comments inside are skipped.
fn numbers<T: std::str::FromStr>(node: Node) -> Result<Vec<T>, CascadeError> {
    node.children()
        .filter(Node::is_text)
        .flat_map(|t| t.text().unwrap_or("").split_whitespace())
        .map(|tok| {
            tok.parse()
                .map_err(|_| schema(&format!("<{}> holds {tok:?}, expected a number", node.tag_name().name())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mirror_core::fixtures::fixture_cascade;

    const OLD_STYLE: &str = r#"<?xml version="1.0"?>
<opencv_storage>
<demo type_id="opencv-haar-classifier">
  <size>24 24</size>
  <stages>
    <_>
      <trees>
        <_>
          <_>
            <feature>
              <rects>
                <_>0 0 24 24 -1.</_>
                <_>4 4 16 16 2.25</_></rects>
              <tilted>0</tilted></feature>
            <threshold>-0.93</threshold>
            <left_val>1.</left_val>
            <right_val>0.</right_val></_></_></trees>
      <stage_threshold>0.5</stage_threshold>
      <parent>-1</parent>
      <next>-1</next></_></stages></demo>
</opencv_storage>"#;

    #[test]
    fn writer_round_trips_the_fixture() {
        let model = fixture_cascade();
        assert_eq!(parse_cascade(&write_cascade(&model)).unwrap(), model);
    }

    #[test]
    fn old_style_layout() {
        let m = parse_cascade(OLD_STYLE).unwrap();
        assert_eq!((m.window_w(), m.window_h()), (24, 24));
        let weak = &m.stages()[0].weak_classifiers[0];
        assert_eq!(weak.rects[1], HaarRect { x: 4, y: 4, w: 16, h: 16, weight: 2.25 });
        assert_eq!((weak.fail_value, weak.pass_value, weak.node_threshold), (1.0, 0.0, -0.93));
        assert_eq!(m.stages()[0].threshold, 0.5);
    }

    #[test]
    fn truncated_markup_is_a_parse_error() {
        let xml = write_cascade(&fixture_cascade());
        let cut = &xml[..xml.len() / 2];
        assert!(matches!(parse_cascade(cut), Err(CascadeError::Parse(_))));
        assert!(matches!(load_cascade(&[0xff, 0xfe]), Err(CascadeError::Parse(_))));
    }

    #[test]
    fn rect_outside_window_is_a_bounds_error() {
        let xml = write_cascade(&fixture_cascade()).replace("<_>0 0 24 24 1.0</_>", "<_>23 23 4 4 1.0</_>");
        assert!(matches!(
            parse_cascade(&xml),
            Err(CascadeError::Bounds { x: 23, y: 23, w: 4, h: 4, .. })
        ));
    }

    #[test]
    fn schema_errors() {
        let xml = write_cascade(&fixture_cascade());
        let no_stages = xml.replace("<stageThreshold>", "<threshold>").replace("</stageThreshold>", "</threshold>");
        assert!(matches!(parse_cascade(&no_stages), Err(CascadeError::Schema(_))));
        let tilted = xml.replacen("<tilted>0</tilted>", "<tilted>1</tilted>", 1);
        assert!(matches!(parse_cascade(&tilted), Err(CascadeError::Schema(_))));
        let tree = xml.replacen("<internalNodes>0 -1 0", "<internalNodes>1 -1 0 0.5 0 -2 1", 1);
        assert!(matches!(parse_cascade(&tree), Err(CascadeError::Schema(_))));
        assert!(matches!(parse_cascade("<opencv_storage/>"), Err(CascadeError::Schema(_))));
    }
}
