import json
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

from click import style

from nczw.ui.views import CaveatsView, ChecksView, ConstantsView, StabilityView


class DotDict(OrderedDict):
    """ Extends `OrderedDict` to access items using dot """
    __slots__ = ['__recursion_lock__']

    def __getattr__(self, name):
        try:
            if name in self.__slots__:
                return object.__getattribute__(self, name)
            else:
                return self[name]
        except KeyError:
            raise AttributeError(name)

    def __setattr__(self, name, value):
        try:
            if name in self.__slots__:
                return object.__setattr__(self, name, value)
            else:
                self[name] = value
        except KeyError:
            raise AttributeError(name)


class ColorScheme(DotDict):
    def __init__(self, scheme: Path):
        with scheme.open('r') as f:
            data = json.load(f)
        super().__init__(data)


class ViewsManager(DotDict):
    pass


class UiManager:
    """
    Renders a report summary as terminal tables.

    - Views can be switched off (`ui_manager.views.constants.active = False`)
    - Colors come from `colors.json` and can be changed on `ui_manager.colors`
    """

    def __init__(self, summary: Mapping, scheme_file=Path(__file__).parent / 'colors.json', active: bool = True):
        """
        :param summary: canonical report summary, see nczw.verify.ConstantReport.summary
        :param scheme_file: pathlib.Path
        :param active: bool
        """
        self.summary = summary
        self.colors = ColorScheme(scheme_file)
        self.views = ViewsManager({
            'checks': ChecksView(summary, self.colors),
            'constants': ConstantsView(summary, self.colors),
            'stability': StabilityView(summary, self.colors),
            'caveats': CaveatsView(summary, self.colors),
        })
        self.active = active

    def render(self) -> str:
        fmt_parts = [str(view) for view in self.views.values() if view.active]
        verdict = self.summary.get('passed', False)
        fmt_parts.append(style('PASSED' if verdict else 'FAILED', fg=self.colors.passed if verdict else
                               self.colors.failed, bold=True))
        return '\n'.join(fmt_parts)

    def show(self) -> None:
        if not self.active:
            return
        print(self.render())
