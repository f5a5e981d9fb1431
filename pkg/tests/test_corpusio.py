import inspect
import io

import numpy as np
import pytest

from phonepool.corpusio import (ArchiveEntry, ManifestRecord, read_archive,
                                read_archive_dict, read_manifest,
                                write_archive, write_manifest)
from phonepool.errors import ParseError, ValidationError


class TestArchive:
    def test_one_by_one_matrix_round_trips_exactly(self):
        buf = io.StringIO()
        write_archive(buf, [ArchiveEntry("u1", np.array([[0.5]], dtype=np.float32))])
        buf.seek(0)
        entries = list(read_archive(buf))
        assert entries[0].utterance_id == "u1"
        np.testing.assert_array_equal(entries[0].matrix,
                                      np.array([[0.5]], dtype=np.float32))

    def test_empty_file_yields_nothing(self):
        assert list(read_archive(io.StringIO(""))) == []

    def test_random_matrices_round_trip_losslessly(self):
        rng = np.random.default_rng(0)
        entries = []
        for i in range(10):
            mat = rng.standard_normal((int(rng.integers(1, 30)),
                                       int(rng.integers(1, 12))))
            scale = 10.0 ** float(rng.integers(-6, 6))
            entries.append(ArchiveEntry(f"utt{i}", (mat * scale).astype(np.float32)))
        buf = io.StringIO()
        write_archive(buf, entries)
        buf.seek(0)
        back = list(read_archive(buf))
        assert [e.utterance_id for e in back] == [e.utterance_id for e in entries]
        for a, b in zip(entries, back):
            np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_write_read_write_is_identity_on_text(self):
        rng = np.random.default_rng(1)
        entries = [ArchiveEntry("u1", rng.standard_normal((4, 3)).astype(np.float32))]
        buf1 = io.StringIO()
        write_archive(buf1, entries)
        buf2 = io.StringIO()
        buf1.seek(0)
        write_archive(buf2, read_archive(buf1))
        assert buf1.getvalue() == buf2.getvalue()

    def test_ragged_row_names_line(self):
        text = "u1  [\n  1 2 3\n  1 2\n  1 2 3 ]\n"
        with pytest.raises(ParseError, match="ragged row at line 3"):
            list(read_archive(io.StringIO(text)))

    def test_malformed_header_names_line(self):
        with pytest.raises(ParseError, match="line 1"):
            list(read_archive(io.StringIO("u1 junk [\n  1 ]\n")))

    def test_unterminated_matrix_rejected(self):
        with pytest.raises(ParseError, match="unterminated"):
            list(read_archive(io.StringIO("u1  [\n  1 2\n")))

    def test_bad_value_rejected(self):
        with pytest.raises(ParseError, match="line 2"):
            list(read_archive(io.StringIO("u1  [\n  1 x ]\n")))

    def test_reader_is_streaming(self):
        assert inspect.isgeneratorfunction(read_archive)
        # consuming only the first entry must not parse the malformed tail
        text = "u1  [\n  1 2 ]\nu2  [\n  broken\n"
        gen = read_archive(io.StringIO(text))
        first = next(gen)
        assert first.utterance_id == "u1"
        gen.close()

    def test_non_finite_rejected_on_write(self):
        with pytest.raises(ValidationError):
            write_archive(io.StringIO(),
                          [ArchiveEntry("u1", np.array([[np.nan]]))])

    def test_empty_matrix_rejected_on_write(self):
        with pytest.raises(ValidationError):
            write_archive(io.StringIO(), [ArchiveEntry("u1", np.zeros((0, 3)))])

    def test_duplicate_ids_rejected_by_dict_reader(self):
        buf = io.StringIO()
        write_archive(buf, [ArchiveEntry("u1", np.ones((1, 1))),
                            ArchiveEntry("u1", np.ones((1, 1)))])
        buf.seek(0)
        with pytest.raises(ValidationError, match="duplicate"):
            read_archive_dict(buf)


HEADER = "utt_id\tspeaker_id\taudio_path\tduration_ms\ttranscript\ttranslation\n"


class TestManifest:
    def test_two_rows(self):
        text = HEADER + "u1\ts1\ta.wav\t1000\thola\thello\n" \
                      + "u2\ts1\tb.wav\t2000\tadios\tbye\n"
        records = read_manifest(io.StringIO(text))
        assert len(records) == 2
        assert records[0] == ManifestRecord("u1", "s1", "a.wav", 1000,
                                            "hola", "hello")

    def test_duplicate_id_names_it(self):
        text = HEADER + "u1\ts1\ta.wav\t1\tx\ty\n" + "u1\ts2\tb.wav\t2\tx\ty\n"
        with pytest.raises(ValidationError, match="u1"):
            read_manifest(io.StringIO(text))

    def test_missing_column(self):
        text = "utt_id\tspeaker_id\taudio_path\tduration_ms\ttranscript\n" \
               + "u1\ts1\ta.wav\t1\tx\n"
        with pytest.raises(ParseError, match="missing column 'translation'"):
            read_manifest(io.StringIO(text))

    def test_round_trip(self):
        records = [ManifestRecord(f"u{i}", "s1", f"{i}.wav", 10 * i, "a b", "c d")
                   for i in range(4)]
        buf = io.StringIO()
        write_manifest(buf, records)
        buf.seek(0)
        assert read_manifest(buf) == records

    def test_empty_path_rejected(self):
        text = HEADER + "u1\ts1\t\t1\tx\ty\n"
        with pytest.raises(ValidationError, match="audio_path"):
            read_manifest(io.StringIO(text))
