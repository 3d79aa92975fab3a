#!/usr/bin/python
##
## Usage: python -m unittest tests.data_tests
##

import os
import unittest

from slkd.config import load_config

SAMPLE_DATA = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                           "sample_data")


class DataTests(unittest.TestCase):
    """
    Abuse of testing framework to verify that all
    sample configs are in the expected format.
    """

    def testFormatOfSampleData(self):
        """ Every .yaml file in sample_data is a valid run config """
        self.helper_testFormat(SAMPLE_DATA)

    def testAsciiOfSampleData(self):
        self.helper_testAscii(SAMPLE_DATA)

    def helper_testFormat(self, dirname):
        """
        Ensure each .yaml file in the dirname directory:
          - parses and validates as a run config
          - has a stage schedule that fits its epoch budget
        """
        found = 0
        for fn in sorted(os.listdir(dirname)):
            if fn.endswith(".yaml"):
                found += 1
                config = load_config(os.path.join(dirname, fn))
                self.assertLessEqual(config.slkd.total_epochs, config.epochs_total, fn)
                self.assertEqual(config.teacher.num_classes, config.student.num_classes, fn)
        self.assertGreater(found, 0, "no sample configs in %s" % dirname)

    def helper_testAscii(self, dirname):
        """
        Ensure each .yaml file in the dirname directory
        contains only ASCII characters.
        """
        for fn in os.listdir(dirname):
            if fn.endswith(".yaml"):
                with open(os.path.join(dirname, fn), encoding="utf-8") as f:
                    for line in f:
                        for c in line:
                            self.assertTrue(ord(c) < 128, "%s contains a non-ASCII character %d"
                                            % (fn, ord(c)))


if __name__ == '__main__':
    unittest.main()
