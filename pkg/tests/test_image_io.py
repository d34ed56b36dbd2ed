import os
import shutil
import tempfile
import unittest

import numpy as np
from PIL import Image

from errors import ImageDecodeError
from image_io import atomic_output, list_images, load_image, match_stems, save_image


class TestImageIO(unittest.TestCase):
    def setUp(self):
        """Set up test environment"""
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test environment"""
        shutil.rmtree(self.test_dir)

    def path(self, *parts):
        return os.path.join(self.test_dir, *parts)

    def test_load_gray_png(self):
        """Test 8-bit gray values map to [0, 1]"""
        array = np.array([[0, 255], [51, 102]], dtype=np.uint8)
        Image.fromarray(array).save(self.path("gray.png"))
        image = load_image(self.path("gray.png"))
        self.assertEqual(image.shape, (1, 2, 2))
        self.assertEqual(image.dtype, np.float32)
        self.assertEqual(image[0, 0, 0], 0.0)
        self.assertEqual(image[0, 0, 1], 1.0)
        self.assertAlmostEqual(float(image[0, 1, 0]), 0.2, places=6)

    def test_load_color(self):
        """Test RGB to luminance conversion"""
        array = np.zeros((2, 2, 3), dtype=np.uint8)
        array[..., 0] = 255
        Image.fromarray(array).save(self.path("red.png"))
        image = load_image(self.path("red.png"))
        np.testing.assert_allclose(image, 0.299, atol=1e-6)

        Image.fromarray(array).save(self.path("red.jpg"), quality=100)
        self.assertEqual(load_image(self.path("red.jpg")).shape, (1, 2, 2))

    def test_load_16_bit(self):
        """Test 16-bit PNGs scale by 65535"""
        array = np.array([[0, 65535], [32768, 1000]], dtype=np.uint16)
        Image.fromarray(array).save(self.path("deep.png"))
        image = load_image(self.path("deep.png"))
        self.assertEqual(image[0, 0, 1], 1.0)
        self.assertAlmostEqual(float(image[0, 1, 0]), 32768 / 65535, places=5)

    def test_round_trip(self):
        """Test that save(load(x)) is pixel-identical for 8-bit gray PNGs"""
        array = np.random.default_rng(0).integers(0, 256, (17, 23)).astype(np.uint8)
        Image.fromarray(array).save(self.path("in.png"))
        save_image(load_image(self.path("in.png")), self.path("out", "copy.png"))
        with Image.open(self.path("out", "copy.png")) as copy:
            self.assertEqual(copy.mode, "L")
            np.testing.assert_array_equal(np.asarray(copy), array)

    def test_corrupt_file(self):
        """Test decode errors carry the path"""
        with open(self.path("broken.png"), "wb") as f:
            f.write(b"\x89PNG not really")
        with self.assertRaises(ImageDecodeError) as cm:
            load_image(self.path("broken.png"))
        self.assertEqual(cm.exception.path, self.path("broken.png"))
        self.assertIn("broken.png", str(cm.exception))

        with self.assertRaises(ImageDecodeError):
            load_image(self.path("missing.png"))

    def test_atomic_output(self):
        """Test that failed writes leave neither target nor temp file"""
        target = self.path("result.csv")
        with self.assertRaises(RuntimeError):
            with atomic_output(target) as tmp:
                with open(tmp, "w") as f:
                    f.write("partial")
                raise RuntimeError("interrupted")
        self.assertFalse(os.path.exists(target))
        self.assertEqual(os.listdir(self.test_dir), [])

        with atomic_output(target) as tmp:
            with open(tmp, "w") as f:
                f.write("done")
        with open(target) as f:
            self.assertEqual(f.read(), "done")
        self.assertEqual(os.listdir(self.test_dir), ["result.csv"])

    def test_list_and_match(self):
        """Test extension filtering and stem matching"""
        for folder, names in (("ir", ["01.png", "02.png", "03.bmp"]), ("vis", ["01.png", "02.jpg", "04.png"])):
            os.makedirs(self.path(folder))
            for name in names:
                Image.new("L", (4, 4)).save(self.path(folder, name))
        with open(self.path("ir", "notes.txt"), "w") as f:
            f.write("not an image")

        self.assertEqual([p.name for p in list_images(self.path("ir"))], ["01.png", "02.png", "03.bmp"])
        self.assertEqual(list_images(self.path("nowhere")), [])

        matched, unmatched = match_stems(self.path("ir"), self.path("vis"))
        self.assertEqual(list(matched), ["01", "02"])
        self.assertEqual(matched["02"][1].name, "02.jpg")
        self.assertEqual(unmatched, ["03", "04"])


if __name__ == '__main__':
    unittest.main()
