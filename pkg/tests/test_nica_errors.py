# call from project directory
# python -m unittest tests/test_nica_errors.py

import logging
import unittest

from nica_errors import *
from logger_utils import log_timer_info, set_all_info_loggers_to_debug_level


class TestNicaErrorMethods(unittest.TestCase):

    def test_hierarchy(self):
        self.assertTrue(issubclass(InstabilityError, NumericError))
        self.assertTrue(issubclass(NumericError, ArithmeticError))
        for cls in [DimensionError, ContractError, DegenerateInputError, ConfigurationError, CalibrationError,
                    ValidationError]:
            self.assertTrue(issubclass(cls, NicaError) and issubclass(cls, ValueError), f"ERROR: {cls.__name__}")

    def test_validation_error_lists_violations(self):
        exp = ValidationError(["kind: 'x' is not one of", "n_seeds: 0 is less than the minimum of 1"])
        self.assertEqual(len(exp.violations), 2)
        self.assertIn("n_seeds", str(exp))
        self.assertEqual(error_as_dict(exp), {"error": "ValidationError", "violations": exp.violations})

    def test_error_as_dict(self):
        self.assertEqual(error_as_dict(ContractError("ERROR: bad")), {"error": "ContractError", "message": "ERROR: bad"})


class TestLoggerUtilMethods(unittest.TestCase):

    def test_log_timer_info_keeps_result(self):
        @log_timer_info
        def add(a, b):
            return a + b
        self.assertEqual(add(2, b=3), 5)
        self.assertEqual(add.__name__, "add")

    def test_debug_level(self):
        test_logger = logging.getLogger("test_nica_errors.info")
        test_logger.setLevel(logging.INFO)
        levels = {name: logging.getLogger(name).level for name in logging.root.manager.loggerDict}
        try:
            set_all_info_loggers_to_debug_level()
            self.assertEqual(test_logger.level, logging.DEBUG)
        finally:
            for name, level in levels.items():
                logging.getLogger(name).setLevel(level)


if __name__ == '__main__':
    unittest.main()
