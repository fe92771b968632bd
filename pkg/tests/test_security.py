import pytest

from cimf.core.errors import AuthError, ValidationError
from cimf.core.security import SecurityManager, validate_identifier, validate_label, validate_logical_name


class TestInputValidation:
    @pytest.mark.parametrize("name", ["dem.asc", "model/depth_max.asc", "inputs/precip_members/y2001.csv"])
    def test_safe_names(self, name):
        assert validate_logical_name(name) == name

    @pytest.mark.parametrize("name", ["", "/abs.asc", "../up.asc", "a/./b", "a//b", "x:y", "what?", "nul\x00"])
    def test_unsafe_names(self, name):
        with pytest.raises(ValidationError) as info:
            validate_logical_name(name, field="options.dem")
        assert info.value.field == "options.dem"

    @pytest.mark.parametrize("value,ok", [
        ("run-20240101T000000-abcd", True),
        ("flood-toy", True),
        ("1.0", True),
        ("-leading", False),
        ("has space", False),
        ("model[y2001]", False),
    ])
    def test_identifiers(self, value, ok):
        if ok:
            assert validate_identifier(value) == value
        else:
            with pytest.raises(ValidationError):
                validate_identifier(value)

    def test_labels(self):
        assert validate_label("_member.01") == "_member.01"
        with pytest.raises(ValidationError):
            validate_label("y 2001")


class TestAuthentication:
    def test_open_when_no_token(self):
        manager = SecurityManager()
        manager.authenticate(None)
        assert not manager.auth_enabled

    @pytest.mark.parametrize("header", [None, "", "Bearer", "Bearer wrong", "Basic s3cret", "s3cret"])
    def test_rejected(self, header):
        manager = SecurityManager("s3cret")
        with pytest.raises(AuthError):
            manager.authenticate(header)
        assert manager.auditor.get_security_summary()["violations_by_type"] == {"authentication": 1}

    def test_accepted(self):
        SecurityManager("s3cret").authenticate("bearer s3cret ")
