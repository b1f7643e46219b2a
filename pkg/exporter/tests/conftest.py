import pytest


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A sub-1M-parameter causal LM with a word-level tokenizer whose digit
    tokens are single vocabulary entries; saved to disk and loaded by the
    exporter exactly like any hub model."""
    import torch
    from tokenizers import Tokenizer
    from tokenizers.models import WordLevel
    from tokenizers.pre_tokenizers import WhitespaceSplit
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    path = tmp_path_factory.mktemp("tinylm")
    words = ["<unk>"] + [str(d) for d in range(1, 10)] + [","]
    vocab = {w: i for i, w in enumerate(words)}
    tok = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = WhitespaceSplit()
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="<unk>")
    fast.save_pretrained(str(path))

    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=len(vocab),
        n_positions=256,
        n_embd=32,
        n_layer=4,
        n_head=4,
        bos_token_id=None,
        eos_token_id=None,
    )
    model = GPT2LMHeadModel(config)
    model.save_pretrained(str(path))
    return str(path)
