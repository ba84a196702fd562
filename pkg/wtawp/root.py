"""
Base objects and exceptions

Description:
    The ``root`` module provides the base option object and the exception
    hierarchy shared by all ``wtawp`` modules.

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

Every configurable piece of ``wtawp`` (dataset generators, models, the
perturbation objective, training, diagnostics and attacks) is described by an
``Options`` object. Options hold plain attributes with keyword defaults, can be
updated from a dictionary (unknown keys are rejected, so typos in ``lambda`` or
``rho`` never pass silently) and can be exported as a metadata table.

>>> from wtawp.awp import AwpConfig
>>> cfg = AwpConfig.from_dict({"rho": 1.0, "lam": 0.7})
>>> print(cfg.get_metadata_df().to_string(index=False))

"""
import pandas as pd


# ------------------------------ EXCEPTIONS ------------------------------
class WtawpError(Exception):
    """Base exception of the ``wtawp`` package"""


class ConfigError(WtawpError, ValueError):
    """Invalid option values, unknown keys or missing files in a configuration"""


class ParseError(WtawpError, ValueError):
    """Malformed line in a dataset file

    :param file_path: path to the offending file
    :type file_path: str
    :param line_number: 1-based line number
    :type line_number: int
    :param message: what is wrong with the line
    :type message: str
    """

    def __init__(self, file_path, line_number, message):
        self.file_path = file_path
        self.line_number = line_number
        super().__init__("{}, line {}: {}".format(file_path, line_number, message))


class TrainingError(WtawpError, RuntimeError):
    """Training diverged (non-finite loss)

    :param epoch: epoch index where the failure was detected
    :type epoch: int
    :param message: diagnostic message
    :type message: str
    """

    def __init__(self, epoch, message):
        self.epoch = epoch
        super().__init__("epoch {}: {}".format(epoch, message))


# ------------------------------ OBJECTS ------------------------------
class Options:
    """
    The primitive options object.

    Downstream objects list their attribute names in ``fields`` and set the
    defaults in ``__init__``. ``validate()`` is expected to be overwritten.

    """

    fields = ()
    aliases = {}

    def __init__(self):
        self.object_name = self.__class__.__name__

        # Metadata fields
        self.mdata_attr_field = "Attribute"
        self.mdata_val_field = "Value"

    def __str__(self):
        """The ``Options`` string"""
        str_df_metadata = self.get_metadata_df().to_string(index=False)
        return "[{}]\n{}".format(self.object_name, str_df_metadata)

    def __eq__(self, other):
        if not isinstance(other, self.__class__):
            return NotImplemented
        return self.get_metadata() == other.get_metadata()

    def get_metadata(self):
        """Get a dictionary with the option values

        :return: dictionary with all fields
        :rtype: dict
        """
        dict_meta = dict()
        for k in self.fields:
            value = getattr(self, k)
            if isinstance(value, tuple):
                value = list(value)
            dict_meta[k] = value
        return dict_meta

    def get_metadata_df(self):
        """Get a :class:`pandas.DataFrame` created from the metadata dictionary

        :return: :class:`pandas.DataFrame` with ``Attribute`` and ``Value``
        :rtype: :class:`pandas.DataFrame`
        """
        dict_metadata = self.get_metadata()
        df_metadata = pd.DataFrame(
            {
                self.mdata_attr_field: [k for k in dict_metadata],
                self.mdata_val_field: [dict_metadata[k] for k in dict_metadata],
            }
        )
        return df_metadata

    def set(self, dict_setter):
        """Set selected attributes based on an incoming dictionary

        :param dict_setter: incoming dictionary with attribute values
        :type dict_setter: dict
        :return: the updated object
        :rtype: :class:`Options`
        """
        dict_setter = {self.aliases.get(k, k): dict_setter[k] for k in dict_setter}
        unknown = [k for k in dict_setter if k not in self.fields]
        if unknown:
            raise ConfigError(
                "{}: unknown key(s) {}. Expected any of {}".format(
                    self.object_name, sorted(unknown), list(self.fields)
                )
            )
        for k in dict_setter:
            setattr(self, k, dict_setter[k])
        self.validate()
        return self

    def validate(self):
        """Check the option values. Raises :class:`ConfigError` on failure.

        :return: None
        :rtype: None
        """
        return None

    def copy(self, **kwargs):
        """Get a copy with some attributes replaced

        :return: new options object
        :rtype: :class:`Options`
        """
        dct = self.get_metadata()
        dct.update(kwargs)
        return self.__class__.from_dict(dct)

    @classmethod
    def from_dict(cls, dict_setter):
        """Build the options object from a dictionary

        :param dict_setter: attribute values, missing keys keep their defaults
        :type dict_setter: dict
        :return: options object
        :rtype: :class:`Options`
        """
        obj = cls()
        if dict_setter is None:
            dict_setter = {}
        obj.set(dict_setter=dict_setter)
        return obj


def check(condition, message):
    """Util for option validation

    :param condition: condition expected to hold
    :type condition: bool
    :param message: error message when it does not
    :type message: str
    :return: None
    :rtype: None
    """
    if not condition:
        raise ConfigError(message)
    return None
