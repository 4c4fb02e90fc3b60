use super::vocab::PAD;
use crate::error::{Error, Result};
use crate::neural::{layers, ParamSet, Tape, Var};

/// Questions longer than this are truncated before encoding.
pub const MAX_QUESTION_TOKENS: usize = 40;

/// Fixed-size question descriptor: the last GRU hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedQuestion {
    pub ids: Vec<usize>,
    pub descriptor: Vec<f64>,
}

/// Drops trailing PAD ids and truncates to [`MAX_QUESTION_TOKENS`].
pub fn effective_ids(ids: &[usize]) -> Result<&[usize]> {
    let end = ids.iter().rposition(|&id| id != PAD).map_or(0, |p| p + 1);
    if end == 0 {
        return Err(Error::Contract("cannot encode an empty question".into()));
    }
    Ok(&ids[..end.min(MAX_QUESTION_TOKENS)])
}

/// Embeds `ids` with the table `embedding` and runs the GRU at `gru` over
/// them, starting from a zero state. Returns the `1×h` final state.
pub fn encode_on_tape<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    embedding: &str,
    gru: &str,
    ids: &[usize],
) -> Result<Var> {
    let ids = effective_ids(ids)?;
    let table = tape.param(params, embedding)?;
    let xs = tape.gather(table, ids)?;
    layers::gru_sequence(tape, params, gru, xs)
}

pub fn encode_question(
    params: &ParamSet,
    embedding: &str,
    gru: &str,
    ids: &[usize],
) -> Result<EncodedQuestion> {
    let mut tape = Tape::new();
    let h = encode_on_tape(&mut tape, params, embedding, gru, ids)?;
    Ok(EncodedQuestion {
        ids: effective_ids(ids)?.to_vec(),
        descriptor: tape.value(h).data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Init, Tensor};
    use crate::text::EmbeddingTable;

    fn setup(vocab: usize, dim: usize, hidden: usize, zero_gru: bool) -> ParamSet {
        let mut p = ParamSet::new(21);
        p.insert("emb", EmbeddingTable::random(vocab, dim, 3).table)
            .unwrap();
        layers::init_gru(&mut p, "gru", dim, hidden).unwrap();
        if zero_gru {
            let names: Vec<String> = p.names().filter(|n| n.starts_with("gru")).map(String::from).collect();
            for n in names {
                let shape = p.get(&n).unwrap().shape().to_vec();
                p.update(&n, Tensor::zeros(&shape)).unwrap();
            }
        }
        p
    }

    #[test]
    fn zero_gru_gives_zero_descriptor() {
        let p = setup(10, 4, 3, true);
        let q = encode_question(&p, "emb", "gru", &[5]).unwrap();
        assert_eq!(q.descriptor, vec![0.0; 3]);
    }

    #[test]
    fn descriptor_width_is_hidden_size() {
        let p = setup(10, 4, 6, false);
        for len in [1, 5, 40, 55] {
            let ids: Vec<usize> = (0..len).map(|i| 4 + i % 6).collect();
            let q = encode_question(&p, "emb", "gru", &ids).unwrap();
            assert_eq!(q.descriptor.len(), 6);
            assert!(q.ids.len() <= MAX_QUESTION_TOKENS);
        }
    }

    #[test]
    fn trailing_padding_is_ignored() {
        let p = setup(10, 4, 5, false);
        let a = encode_question(&p, "emb", "gru", &[4, 7, 8]).unwrap();
        let b = encode_question(&p, "emb", "gru", &[4, 7, 8, PAD, PAD]).unwrap();
        assert_eq!(a.descriptor, b.descriptor);
    }

    #[test]
    fn empty_question_rejected() {
        let p = setup(10, 4, 5, false);
        assert!(matches!(
            encode_question(&p, "emb", "gru", &[]),
            Err(Error::Contract(_))
        ));
        assert!(encode_question(&p, "emb", "gru", &[PAD, PAD]).is_err());
    }

    #[test]
    fn xavier_init_used_for_gru() {
        let mut p = ParamSet::new(1);
        layers::init_gru(&mut p, "gru", 3, 2).unwrap();
        assert!(p.contains("gru.w_z") && p.contains("gru.u_h") && p.contains("gru.b_r"));
        let _ = Init::Xavier;
    }
}
