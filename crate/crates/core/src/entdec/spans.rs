use crate::corpus::{Span, Tag, TagSequence};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Subject,
    Object,
}

fn role_of(tag: Tag) -> Option<(Role, bool)> {
    match tag {
        Tag::BS => Some((Role::Subject, true)),
        Tag::IS => Some((Role::Subject, false)),
        Tag::BO => Some((Role::Object, true)),
        Tag::IO => Some((Role::Object, false)),
        Tag::O => None,
    }
}

/// First subject span and first object span in token order.
///
/// Decoding is lenient: an inside tag that does not directly follow a tag of
/// its own role starts a new span, as if it were the matching begin tag.
pub fn tags_to_spans(tags: &TagSequence) -> (Option<Span>, Option<Span>) {
    let mut subject: Option<Span> = None;
    let mut object: Option<Span> = None;
    let mut open: Option<(Role, Span)> = None;

    let mut close = |open: &mut Option<(Role, Span)>| {
        if let Some((role, span)) = open.take() {
            let slot = match role {
                Role::Subject => &mut subject,
                Role::Object => &mut object,
            };
            if slot.is_none() {
                *slot = Some(span);
            }
        }
    };

    for (t, &tag) in tags.as_slice().iter().enumerate() {
        match role_of(tag) {
            None => close(&mut open),
            Some((role, begin)) => match &mut open {
                Some((r, span)) if *r == role && !begin => span.end = t + 1,
                _ => {
                    close(&mut open);
                    open = Some((role, Span::new(t, t + 1)));
                }
            },
        }
    }
    close(&mut open);
    (subject, object)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Tag::*;

    fn spans(tags: &[Tag]) -> (Option<Span>, Option<Span>) {
        tags_to_spans(&TagSequence(tags.to_vec()))
    }

    #[test]
    fn well_formed() {
        assert_eq!(
            spans(&[BS, IS, O, BO]),
            (Some(Span::new(0, 2)), Some(Span::new(3, 4)))
        );
    }

    #[test]
    fn dangling_inside_opens_span() {
        assert_eq!(spans(&[O, IS, O]), (Some(Span::new(1, 2)), None));
        assert_eq!(
            spans(&[BS, IO, IO]),
            (Some(Span::new(0, 1)), Some(Span::new(1, 3)))
        );
    }

    #[test]
    fn nothing_tagged() {
        assert_eq!(spans(&[O, O, O]), (None, None));
    }

    #[test]
    fn first_occurrence_wins() {
        assert_eq!(
            spans(&[BO, O, BS, BS, IS, BO, IO]),
            (Some(Span::new(2, 3)), Some(Span::new(0, 1)))
        );
        // A new begin tag splits a running span.
        assert_eq!(spans(&[BS, IS, BS]), (Some(Span::new(0, 2)), None));
    }
}
