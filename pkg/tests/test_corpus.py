import pytest

from joint_annotator.corpus import (
    Corpus,
    Schema,
    Sentence,
    Task,
    Token,
    detect_schema,
    load_corpus,
    read_column_file,
    read_tokenized_lines,
    write_column_file,
)
from joint_annotator.misc import CorpusFormatError


def write(tmp_path, name: str, text: str) -> str:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_toy_corpus_shape(toy):
    assert len(toy) == 50
    assert toy.task is Task.JOINT
    assert toy.token_count() == 292
    assert all(s.has(Task.JOINT) for s in toy)


def test_read_vinai_row(toy):
    token = toy[0].tokens[4]
    assert token == Token(5, "VinAI", "Np", "B-ORG", 4, "pob")


def test_read_hanoi_block(tmp_path):
    path = write(
        tmp_path,
        "fig.conll",
        "1\tĐây\tPRON\tO\t2\tsub\n2\tlà\tVERB\tO\t0\troot\n3\tHà_Nội\tNOUN\tB-LOC\t2\tvmod\n",
    )
    corpus = read_column_file(path, Schema.JOINT)
    assert len(corpus) == 1
    assert corpus[0].tokens[2] == Token(3, "Hà_Nội", "NOUN", "B-LOC", 2, "vmod")
    assert corpus[0].heads == [2, 0, 2]


def test_space_aligned_columns_are_accepted(tmp_path):
    text = "1   Đây   PRON  O      2  sub\n2   là    VERB  O      0  root\n"
    path = write(tmp_path, "spaces.conll", text)
    corpus = read_column_file(path, Schema.JOINT)
    assert corpus[0].forms == ["Đây", "là"]
    assert corpus[0].deprels == ["sub", "root"]


def test_empty_file_gives_empty_corpus(tmp_path):
    corpus = read_column_file(write(tmp_path, "empty.conll", ""), Schema.JOINT)
    assert len(corpus) == 0


def test_comments_are_skipped(tmp_path):
    text = "# sent_id = 1\n1\tĐây\tP\tO\t0\troot\n\n\n# x\n1\tlà\tV\tO\t0\troot\n"
    path = write(tmp_path, "c.conll", text)
    assert [s.forms for s in read_column_file(path, Schema.JOINT)] == [["Đây"], ["là"]]


def test_pos_and_ner_two_column_schemas(tmp_path):
    pos = read_column_file(write(tmp_path, "pos.txt", "Tôi\tP\nđi\tV\n\nHọ\tP\n"), Schema.POS)
    assert pos.task is Task.POS
    assert pos[0].pos_tags == ["P", "V"]
    assert pos[0].annotations == frozenset({Task.POS})

    ner = read_column_file(write(tmp_path, "ner.txt", "Lan\tB-PER\nđến\tO\n"), Schema.NER)
    assert ner.task is Task.NER
    assert ner[0].ner_labels == ["B-PER", "O"]
    assert not ner[0].has(Task.POS)


def test_conllx_dependency_schema(tmp_path):
    text = (
        "1\tTôi\t_\tP\tP\t_\t2\tsub\t_\t_\n"
        "2\tđi\t_\tV\tV\t_\t0\troot\t_\t_\n"
    )
    corpus = read_column_file(write(tmp_path, "dep.conll", text), Schema.DEP)
    assert corpus.task is Task.DEP
    assert corpus[0].heads == [2, 0]
    assert corpus[0].pos_tags == ["P", "V"]


def test_wrong_column_count_names_the_line(tmp_path):
    path = write(tmp_path, "bad.conll", "1\tĐây\tPRON\tO\t2\tsub\n2\tlà\tVERB\n")
    with pytest.raises(CorpusFormatError, match=r"bad\.conll:2"):
        read_column_file(path, Schema.JOINT)


def test_unknown_task_header_names_the_line(tmp_path):
    path = write(tmp_path, "task.conll", "# task = bogus\n1\tĐây\tPRON\tO\t2\tsub\n")
    with pytest.raises(CorpusFormatError, match=r"task\.conll:1: unknown task 'bogus'"):
        read_column_file(path, Schema.JOINT)


def test_head_out_of_range(tmp_path):
    path = write(tmp_path, "head.conll", "1\tĐây\tP\tO\t0\troot\n2\tlà\tV\tO\t7\tvmod\n")
    with pytest.raises(CorpusFormatError, match="sentence 1"):
        read_column_file(path, Schema.JOINT)


def test_invalid_bio_label(tmp_path):
    path = write(tmp_path, "bio.conll", "1\tĐây\tP\tX-LOC\t0\troot\n")
    with pytest.raises(CorpusFormatError, match="BIO"):
        read_column_file(path, Schema.JOINT)


def test_two_roots_are_rejected(tmp_path):
    path = write(tmp_path, "roots.conll", "1\tĐây\tP\tO\t0\troot\n2\tlà\tV\tO\t0\troot\n")
    with pytest.raises(CorpusFormatError, match="root"):
        read_column_file(path, Schema.JOINT)


def test_cycle_is_rejected(tmp_path):
    text = "1\ta\tP\tO\t2\tx\n2\tb\tP\tO\t1\tx\n3\tc\tP\tO\t0\troot\n"
    with pytest.raises(CorpusFormatError, match="cycle"):
        read_column_file(write(tmp_path, "cycle.conll", text), Schema.JOINT)


def test_non_contiguous_indices(tmp_path):
    path = write(tmp_path, "idx.conll", "1\ta\tP\tO\t0\troot\n3\tb\tP\tO\t1\tx\n")
    with pytest.raises(CorpusFormatError, match="expected token index 2"):
        read_column_file(path, Schema.JOINT)


def test_round_trip_is_byte_identical(tmp_path, toy):
    first = tmp_path / "a.conll"
    second = tmp_path / "b.conll"
    write_column_file(toy, str(first))
    again = read_column_file(str(first), Schema.JOINT)
    write_column_file(again, str(second))

    assert list(again) == list(toy)
    assert first.read_bytes() == second.read_bytes()


def test_hanoi_written_columns(tmp_path, hanoi_sentence):
    path = tmp_path / "fig.conll"
    write_column_file(Corpus.of([hanoi_sentence], Task.JOINT), str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert [line.split("\t")[4:] for line in lines] == [["2", "sub"], ["0", "root"], ["2", "vmod"]]


def test_partial_corpus_writes_placeholders(tmp_path):
    pos = read_column_file(write(tmp_path, "pos.txt", "Tôi\tP\nđi\tV\n"), Schema.POS)
    out = tmp_path / "pos.conll"
    write_column_file(pos, str(out))

    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# task = pos"
    assert lines[1] == "1\tTôi\tP\t_\t_\t_"

    again = read_column_file(str(out), Schema.JOINT)
    assert again.task is Task.POS
    assert list(again) == list(pos)


def test_read_tokenized_lines(tmp_path):
    path = write(tmp_path, "in.txt", "Tôi đang làm_việc\n\nĐây là Hà_Nội\n")
    sentences = read_tokenized_lines(path)
    assert sentences[1] is None
    assert sentences[0].forms == ["Tôi", "đang", "làm_việc"]
    assert sentences[2].annotations == frozenset()


def test_detect_schema_and_load_corpus(tmp_path, toy_path):
    assert detect_schema(toy_path, Task.NER) is Schema.JOINT
    two_columns = write(tmp_path, "ner.txt", "# comment\nLan\tB-PER\n")
    assert detect_schema(two_columns, Task.NER) is Schema.NER

    ner = load_corpus(toy_path, Task.NER)
    assert ner.task is Task.NER
    assert len(ner) == 50


def test_sentence_invariants():
    with pytest.raises(ValueError):
        Sentence(())
    with pytest.raises(ValueError):
        Sentence((Token(2, "a"),))
    with pytest.raises(ValueError):
        Token(1, "a", head=1)
    with pytest.raises(ValueError):
        Sentence((Token(1, "a"),), frozenset({Task.POS}))


def test_corpus_requires_task_annotation():
    with pytest.raises(CorpusFormatError):
        Corpus.of([Sentence.from_forms(["a"])], Task.POS)
