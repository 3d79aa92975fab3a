#!/usr/bin/python
##
## Usage: python -m unittest tests.data_readers_tests
##

import os
import struct
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from slkd.config import DataConfig
from slkd.data_readers import (AugmentPolicy, Dataset, DatasetFormatError, augment,
                               encode_cifar_records, encode_idx, load_cifar_binary, load_idx,
                               load_splits, make_batches, synth_blobs, write_idx)
from slkd.label_transformers import add_label_noise, one_hot


class FileTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, data):
        path = os.path.join(self.tmp.name, name)
        with open(path, "wb") as f:
            f.write(data)
        return path


class IdxTests(FileTestCase):

    def idx_pair(self, images=None, labels=None):
        if images is None:
            images = struct.pack(">4I", 0x803, 2, 2, 3) + bytes(range(12))
        if labels is None:
            labels = struct.pack(">2I", 0x801, 2) + bytes([3, 1])
        return self.write("images.idx", images), self.write("labels.idx", labels)

    def testHandBuiltFile(self):
        data = load_idx(*self.idx_pair())
        self.assertEqual(data.images.shape, (2, 1, 2, 3))
        self.assertEqual(data.images.dtype, np.float32)
        assert_allclose(data.images[1, 0], np.arange(6, 12).reshape(2, 3) / 255.0, rtol=1e-6)
        assert_array_equal(data.labels, [3, 1])
        self.assertEqual(data.class_count, 4)

    def testExplicitClassCount(self):
        self.assertEqual(load_idx(*self.idx_pair(), class_count=10).class_count, 10)

    def testBadMagic(self):
        paths = self.idx_pair(images=struct.pack(">4I", 0x801, 2, 2, 3) + bytes(12))
        with self.assertRaisesRegex(DatasetFormatError, "bad magic"):
            load_idx(*paths)

    def testTruncatedHeader(self):
        paths = self.idx_pair(images=struct.pack(">2I", 0x803, 2))
        with self.assertRaisesRegex(DatasetFormatError, "truncated header"):
            load_idx(*paths)

    def testTruncatedPayload(self):
        paths = self.idx_pair(images=struct.pack(">4I", 0x803, 2, 2, 3) + bytes(11))
        with self.assertRaisesRegex(DatasetFormatError, "truncated payload"):
            load_idx(*paths)

    def testTrailingBytes(self):
        paths = self.idx_pair(labels=struct.pack(">2I", 0x801, 2) + bytes([3, 1, 0]))
        with self.assertRaisesRegex(DatasetFormatError, "trailing"):
            load_idx(*paths)

    def testCountMismatch(self):
        paths = self.idx_pair(labels=struct.pack(">2I", 0x801, 1) + bytes([3]))
        with self.assertRaisesRegex(DatasetFormatError, "count mismatch"):
            load_idx(*paths)

    def testEncoderMatchesHandBuiltBytes(self):
        images, labels = encode_idx(np.arange(12).reshape(2, 2, 3), [3, 1])
        self.assertEqual(images, struct.pack(">4I", 0x803, 2, 2, 3) + bytes(range(12)))
        self.assertEqual(labels, struct.pack(">2I", 0x801, 2) + bytes([3, 1]))

    def testWriteThenLoad(self):
        pixels = np.random.default_rng(0).integers(0, 256, (5, 1, 4, 4)).astype(np.float32)
        original = Dataset(pixels / 255, [0, 1, 2, 1, 0], 3)
        paths = os.path.join(self.tmp.name, "a.idx"), os.path.join(self.tmp.name, "b.idx")
        write_idx(original, *paths)
        loaded = load_idx(*paths, class_count=3)
        assert_allclose(loaded.images, original.images, atol=1e-6)
        assert_array_equal(loaded.labels, original.labels)


class CifarTests(FileTestCase):

    def planes(self, n):
        images = np.zeros((n, 3, 32, 32), dtype=np.uint8)
        images[:, 0], images[:, 1], images[:, 2] = 10, 20, 30
        images[:, 0, 0, 1] = np.arange(n)
        return images

    def testCifar10Layout(self):
        path = self.write("batch.bin", encode_cifar_records(self.planes(2), [7, 2]))
        data = load_cifar_binary(path)
        self.assertEqual(data.images.shape, (2, 3, 32, 32))
        assert_array_equal(data.labels, [7, 2])
        self.assertEqual(data.class_count, 10)
        assert_allclose(data.images[0, :, 5, 5], np.array([10, 20, 30]) / 255.0, rtol=1e-6)
        assert_allclose(data.images[1, 0, 0, 1], 1 / 255.0, rtol=1e-6)

    def testRecordBytesByHand(self):
        raw = encode_cifar_records(self.planes(1), [4])
        self.assertEqual(len(raw), 1 + 3072)
        self.assertEqual(raw[0], 4)
        self.assertEqual(raw[1 + 1024], 20)

    def testCifar100UsesFineLabel(self):
        raw = encode_cifar_records(self.planes(3), [55, 0, 99], coarse_labels=[1, 2, 3])
        data = load_cifar_binary(self.write("train.bin", raw), label_bytes=2)
        assert_array_equal(data.labels, [55, 0, 99])
        self.assertEqual(data.class_count, 100)

    def testFilesConcatenateInOrder(self):
        a = self.write("a.bin", encode_cifar_records(self.planes(1), [1]))
        b = self.write("b.bin", encode_cifar_records(self.planes(2), [2, 3]))
        assert_array_equal(load_cifar_binary([b, a]).labels, [2, 3, 1])

    def testRecordLength(self):
        path = self.write("bad.bin", encode_cifar_records(self.planes(1), [1])[:-1])
        with self.assertRaisesRegex(DatasetFormatError, "record length"):
            load_cifar_binary(path)

    def testEmptyFile(self):
        with self.assertRaisesRegex(DatasetFormatError, "empty dataset"):
            load_cifar_binary(self.write("empty.bin", b""))


class BlobTests(unittest.TestCase):

    def testShapeAndBalance(self):
        data = synth_blobs(4, 25, 6, 0.1, seed=0)
        self.assertEqual(data.images.shape, (100, 1, 1, 6))
        assert_array_equal(data.per_class_counts, [25] * 4)
        self.assertGreaterEqual(data.images.min(), 0.0)
        self.assertLessEqual(data.images.max(), 1.0)

    def testSeeded(self):
        a, b = synth_blobs(3, 10, 4, 0.2, seed=5), synth_blobs(3, 10, 4, 0.2, seed=5)
        assert_array_equal(a.images, b.images)
        assert_array_equal(a.labels, b.labels)
        c = synth_blobs(3, 10, 4, 0.2, seed=6)
        self.assertFalse(np.array_equal(a.images, c.images))

    def testSplitsShareCenters(self):
        train = synth_blobs(3, 200, 5, 0.01, seed=1, split="train")
        test = synth_blobs(3, 200, 5, 0.01, seed=1, split="test")
        self.assertFalse(np.array_equal(train.images, test.images))
        for k in range(3):
            assert_allclose(train.images[train.labels == k].mean(axis=0),
                            test.images[test.labels == k].mean(axis=0), atol=0.01)

    def testLoadSplitsAppliesNoise(self):
        config = DataConfig(kind="blobs", class_count=5, per_class=20, test_per_class=4, dims=3,
                            spread=0.1, label_noise=0.25)
        noisy = load_splits(config, seed=2)
        clean = load_splits(DataConfig(kind="blobs", class_count=5, per_class=20,
                                       test_per_class=4, dims=3, spread=0.1), seed=2)
        self.assertEqual(int(np.sum(noisy.train.labels != clean.train.labels)), 25)
        assert_array_equal(noisy.test.labels, clean.test.labels)


class LabelTests(unittest.TestCase):

    def testOneHot(self):
        assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])
        with self.assertRaises(ValueError):
            one_hot([3], 3)

    def testNoiseFlipsExactFraction(self):
        labels = np.repeat(np.arange(4), 50)
        noisy, flipped = add_label_noise(labels, 4, 0.2, seed=0)
        self.assertEqual(flipped.size, 40)
        assert_array_equal(np.flatnonzero(noisy != labels), flipped)
        self.assertTrue(np.all((noisy >= 0) & (noisy < 4)))

    def testNoiseIsSeeded(self):
        labels = np.arange(100) % 10
        a, _ = add_label_noise(labels, 10, 0.3, seed=4)
        b, _ = add_label_noise(labels, 10, 0.3, seed=4)
        assert_array_equal(a, b)

    def testZeroNoise(self):
        labels = np.arange(10) % 3
        noisy, flipped = add_label_noise(labels, 3, 0.0, seed=0)
        assert_array_equal(noisy, labels)
        self.assertEqual(flipped.size, 0)


class DatasetTests(unittest.TestCase):

    def testLabelRange(self):
        with self.assertRaises(ValueError):
            Dataset(np.zeros((2, 1, 1, 1)), [0, 2], 2)

    def testImageRank(self):
        with self.assertRaises(ValueError):
            Dataset(np.zeros((2, 3)), [0, 1], 2)

    def testSubset(self):
        data = synth_blobs(2, 5, 2, 0.1, seed=0)
        sub = data.subset([3, 1])
        assert_array_equal(sub.labels, data.labels[[3, 1]])
        self.assertEqual(sub.class_count, 2)


class AugmentTests(unittest.TestCase):

    def setUp(self):
        self.images = np.arange(2 * 1 * 4 * 4, dtype=np.float32).reshape(2, 1, 4, 4)

    def testIdentityPolicy(self):
        policy = AugmentPolicy()
        self.assertTrue(policy.is_identity)
        assert_array_equal(augment(self.images, policy), self.images)

    def testAlwaysFlip(self):
        out = augment(self.images, AugmentPolicy(hflip=1.0, seed=3))
        assert_array_equal(out, self.images[..., ::-1])

    def testCropOffsetsFromSeededStream(self):
        policy = AugmentPolicy(pad=1, seed=9)
        out = augment(self.images, policy, epoch=2, batch_index=5)
        offsets = np.random.default_rng([9, 2, 5]).integers(0, 3, size=(2, 2))
        padded = np.pad(self.images, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for k, (dy, dx) in enumerate(offsets):
            assert_array_equal(out[k], padded[k, :, dy:dy + 4, dx:dx + 4])

    def testDeterministic(self):
        policy = AugmentPolicy(pad=2, hflip=0.5, seed=1)
        assert_array_equal(augment(self.images, policy, 3, 4), augment(self.images, policy, 3, 4))

    def testShapePreserved(self):
        out = augment(self.images, AugmentPolicy(pad=2, hflip=0.5))
        self.assertEqual(out.shape, self.images.shape)

    def testInputUntouched(self):
        before = self.images.copy()
        augment(self.images, AugmentPolicy(pad=1, hflip=1.0))
        assert_array_equal(self.images, before)

    def testInvalidProbability(self):
        with self.assertRaises(ValueError):
            AugmentPolicy(hflip=1.5)


class BatchTests(unittest.TestCase):

    def testCoversActiveSetOnce(self):
        active = np.array([9, 2, 7, 4, 11, 0, 5])
        plan = make_batches(active, 3, epoch_seed=1)
        batches = list(plan.batches())
        self.assertEqual(len(plan), 3)
        self.assertEqual([len(b) for b in batches], [3, 3, 1])
        assert_array_equal(np.sort(np.concatenate(batches)), np.sort(active))

    def testOrderIgnoresInputOrder(self):
        a = make_batches([5, 1, 3, 8], 2, epoch_seed=4)
        b = make_batches([8, 3, 1, 5], 2, epoch_seed=4)
        assert_array_equal(a.order, b.order)

    def testSeedChangesOrder(self):
        active = np.arange(50)
        self.assertFalse(np.array_equal(make_batches(active, 10, 1).order,
                                        make_batches(active, 10, 2).order))

    def testEmptyActiveSet(self):
        with self.assertRaises(ValueError):
            make_batches([], 4, 0)


if __name__ == "__main__":
    unittest.main()
