import numpy as np
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from core import exit_codes
from core.commands import KemenyCommand, exit_code_for
from core.exceptions import (
    CapacityError, CheckpointMismatchError, CorruptCheckpointError, IngestionError, InvalidConfigError,
    InvalidInputError, ShapeError, UnsupportedFormatError,
)
from core.seeding import derive_seed, make_rng, restore_rng, rng_state
from core.utils import decode_array, encode_array


class ExceptionTests(SimpleTestCase):
    def test_config_error_lists_fields(self):
        error = InvalidConfigError({'n': ['must be at least 2'], 'kind': ['unknown']})
        self.assertEqual(str(error), 'kind: unknown; n: must be at least 2')
        self.assertIsInstance(error, ValueError)

    def test_ingestion_error_names_location(self):
        error = IngestionError('missing value', row=3, column='gdp')
        self.assertEqual(str(error), "missing value (row 3, column 'gdp')")
        self.assertEqual(error.row, 3)

    def test_shape_error_names_primitive(self):
        self.assertEqual(str(ShapeError('matmul', (2, 3), (4, 5))), 'matmul: incompatible shapes (2, 3) and (4, 5)')


class ExitCodeTests(SimpleTestCase):
    def test_mapping(self):
        self.assertEqual(exit_code_for(CapacityError('too big')), exit_codes.CAPACITY)
        self.assertEqual(exit_code_for(CheckpointMismatchError('d_model')), exit_codes.CONFIG_MISMATCH)
        self.assertEqual(exit_code_for(CorruptCheckpointError('truncated')), exit_codes.IO_FAILURE)
        self.assertEqual(exit_code_for(UnsupportedFormatError('ties')), exit_codes.IO_FAILURE)
        self.assertEqual(exit_code_for(FileNotFoundError('gone')), exit_codes.IO_FAILURE)
        self.assertEqual(exit_code_for(InvalidInputError('bad')), exit_codes.USAGE)

    def test_command_translates_errors(self):
        class Failing(KemenyCommand):
            def run(self, *args, **options):
                raise CapacityError('n=30 exceeds 20')

        with self.assertRaises(CommandError) as raised:
            Failing().handle()
        self.assertEqual(raised.exception.returncode, exit_codes.CAPACITY)
        self.assertIn('n=30', str(raised.exception))


class SeedingTests(SimpleTestCase):
    def test_streams_are_reproducible(self):
        np.testing.assert_array_equal(make_rng(7).permutation(20), make_rng(7).permutation(20))

    def test_derived_seeds_are_distinct_and_stable(self):
        seeds = {derive_seed(1234, index) for index in range(100)}
        self.assertEqual(len(seeds), 100)
        self.assertEqual(derive_seed(1234, 5), derive_seed(1234, 5))
        self.assertNotEqual(derive_seed(1234, 5), derive_seed(1235, 5))

    def test_seed_range(self):
        with self.assertRaises(ValueError):
            make_rng(-1)

    def test_restored_state_continues_the_stream(self):
        rng = make_rng(99)
        rng.random(10)
        state = rng_state(rng)
        expected = rng.random(5)
        np.testing.assert_array_equal(restore_rng(state).random(5), expected)


class ArrayCodecTests(SimpleTestCase):
    def test_bit_exact(self):
        array = make_rng(3).standard_normal((4, 5)).astype(np.float32)
        decoded = decode_array(encode_array(array))
        self.assertEqual(decoded.dtype, np.float32)
        self.assertEqual(decoded.tobytes(), array.tobytes())

    def test_wrong_size_payload(self):
        document = encode_array(np.zeros(6))
        document['shape'] = [7]
        with self.assertRaises(ValueError):
            decode_array(document)
